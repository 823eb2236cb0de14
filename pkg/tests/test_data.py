import json
from collections import deque

import numpy as np
import pytest

from convkgqa import data as dm
from convkgqa.errors import ConfigurationError, ParseError
from convkgqa.kg import augment, load_triples, out_edges


@pytest.fixture()
def world(tmp_path):
    config = dm.SynthConfig(n_entities=40, n_relations=4, n_conversations=30,
                            turns_per_conversation=5)
    lines = dm.synth_kg_lines(config, seed=3)
    path = tmp_path / "kg.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    kg = load_triples(path)
    augment(kg)
    train, valid, test = dm.synth_generate(kg, config, seed=3)
    vocab = dm.Vocabulary.build(dm.corpus_texts(train))
    return kg, config, train, valid, test, vocab


def test_tokenize_empty_text_is_cls_sep_with_flag():
    vocab = dm.Vocabulary.build(["hello world"])
    q = dm.tokenize("", vocab)
    assert q.token_ids == (dm.CLS, dm.SEP)
    assert q.empty


def test_tokenize_frames_content_with_cls_sep():
    vocab = dm.Vocabulary.build(["who wrote moby dick ?"])
    q = dm.tokenize("Who wrote Moby Dick?", vocab)
    assert q.token_ids[0] == dm.CLS
    assert q.token_ids[-1] == dm.SEP
    # who, wrote, moby, dick, ? -> five content tokens, none unknown.
    assert len(q.token_ids) == 7
    assert dm.UNK not in q.token_ids


def test_tokenize_maps_oov_to_unk_and_truncates():
    vocab = dm.Vocabulary.build(["known words only"])
    q = dm.tokenize("known unknownword", vocab)
    assert q.token_ids[1] == vocab.lookup("known")
    assert q.token_ids[2] == dm.UNK
    long = dm.tokenize("known " * 100, vocab, max_len=16)
    assert len(long.token_ids) == 16


def test_detokenize_round_trips_in_vocab_words(world):
    _kg, _config, train, _valid, _test, vocab = world
    for conv in train[:10]:
        for turn in conv.turns:
            text = turn.question.raw_text
            q = dm.tokenize(text, vocab)
            words = dm.detokenize(q, vocab)
            assert words == dm._WORD_RE.findall(text.lower())


def test_vocabulary_stable_and_persistable(tmp_path):
    texts = ["b a c", "a d"]
    v1 = dm.Vocabulary.build(texts)
    v2 = dm.Vocabulary.build(reversed(texts))
    assert v1.id_to_token == v2.id_to_token
    path = tmp_path / "vocab.json"
    v1.save(path, rng_seed=1, config_hash="x")
    v3 = dm.Vocabulary.load(path)
    assert v3.id_to_token == v1.id_to_token


def test_save_load_round_trip(world, tmp_path):
    kg, _config, train, _valid, _test, vocab = world
    path = tmp_path / "train.json"
    dm.save_conversations(train, path)
    loaded = dm.load_conversations(path, vocab, kg)
    assert len(loaded) == len(train)
    path2 = tmp_path / "again.json"
    dm.save_conversations(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()
    sample = loaded[0]
    assert sample.main_topic_entity == kg.entity_id(sample.seed_entity_key)
    assert sample.turns[0].question.token_ids[0] == dm.CLS


def test_unknown_answer_drops_conversation(world, tmp_path):
    kg, _config, train, _valid, _test, vocab = world
    path = tmp_path / "bad.json"
    dm.save_conversations(train[:2], path)
    doc = json.loads(path.read_text())
    doc[0]["turns"][1]["answers"] = ["no-such-entity"]
    path.write_text(json.dumps(doc))
    stats = {}
    loaded = dm.load_conversations(path, vocab, kg, stats=stats)
    assert stats["dropped"] == 1
    assert len(loaded) == 1


def test_schema_violation_reports_document_path(world, tmp_path):
    kg, _config, train, _valid, _test, vocab = world
    path = tmp_path / "broken.json"
    dm.save_conversations(train[:1], path)
    doc = json.loads(path.read_text())
    del doc[0]["turns"][2]["question"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError, match=r"conversations\[0\].turns\[2\]"):
        dm.load_conversations(path, vocab, kg)


def test_single_turn_conversations_name_their_topic(tmp_path):
    config = dm.SynthConfig(n_entities=30, n_relations=3, n_conversations=12,
                            turns_per_conversation=1)
    lines = dm.synth_kg_lines(config, seed=5)
    path = tmp_path / "kg.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    kg = load_triples(path)
    augment(kg)
    train, valid, test = dm.synth_generate(kg, config, seed=5)
    for conv in train + valid + test:
        turn = conv.turns[0]
        assert conv.seed_entity_key.lower() in turn.question.raw_text.lower()


def test_zero_shift_prob_chains_topics(tmp_path):
    config = dm.SynthConfig(n_entities=40, n_relations=4, n_conversations=20,
                            topic_shift_prob=0.0, two_hop_prob=0.0)
    lines = dm.synth_kg_lines(config, seed=7)
    path = tmp_path / "kg.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    kg = load_triples(path)
    augment(kg)
    train, valid, test = dm.synth_generate(kg, config, seed=7)
    for conv in train + valid + test:
        for prev, cur in zip(conv.turns, conv.turns[1:]):
            if len(prev.gold_answers) == 1 and cur.gold_topic in prev.gold_answers:
                continue
            # Shift only allowed when the chain could not continue.
            assert cur.gold_topic == conv.main_topic_entity


def _bfs_within(kg, source, max_hops):
    seen = {source}
    frontier = deque([(source, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == max_hops:
            continue
        for edge in out_edges(kg, node):
            if edge.target_entity_id not in seen:
                seen.add(edge.target_entity_id)
                frontier.append((edge.target_entity_id, depth + 1))
    return seen


def test_gold_answers_reachable_within_two_hops(world):
    kg, _config, train, valid, test, _vocab = world
    for conv in train + valid + test:
        for turn in conv.turns:
            reachable = _bfs_within(kg, turn.gold_topic, max_hops=2)
            assert turn.gold_answers <= reachable


def test_splits_are_conversation_disjoint_and_test_has_no_human_refs(world):
    _kg, _config, train, valid, test, _vocab = world
    ids = [c.id for c in train] + [c.id for c in valid] + [c.id for c in test]
    assert len(ids) == len(set(ids))
    for conv in test:
        for turn in conv.turns:
            assert turn.human_reformulations == []
    for conv in train:
        assert any(turn.human_reformulations for turn in conv.turns)


def test_human_refs_include_fully_resolved_form(world):
    kg, _config, train, _valid, _test, _vocab = world
    for conv in train:
        for turn in conv.turns:
            topic_label = kg.entity_labels[turn.gold_topic]
            assert any(topic_label in q.raw_text for q in turn.human_reformulations)


def test_generation_is_seed_deterministic(world, tmp_path):
    kg, config, train, _valid, _test, _vocab = world
    again, _, _ = dm.synth_generate(kg, config, seed=3)
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    dm.save_conversations(train, a)
    dm.save_conversations(again, b)
    assert a.read_bytes() == b.read_bytes()


def test_provider_dataset_mode_returns_stored(world):
    _kg, _config, train, _valid, _test, vocab = world
    provider = dm.ReformulationProvider("dataset", vocab)
    turn = train[0].turns[0]
    refs = provider.provide(turn.question, turn)
    assert [q.raw_text for q in refs] == \
        [q.raw_text for q in turn.generated_reformulations[:4]]


def test_provider_template_mode_paraphrases_same_relation(world):
    _kg, _config, train, _valid, _test, vocab = world
    provider = dm.ReformulationProvider("template", vocab)
    checked = 0
    for conv in train[:10]:
        for turn in conv.turns:
            refs = provider.provide(turn.question)
            assert refs, turn.question.raw_text
            for ref in refs:
                assert ref.raw_text != turn.question.raw_text
            checked += 1
    assert checked > 0


def test_template_paraphrases_never_fabricate_entities():
    # Pronoun questions must stay pronoun questions.
    for text in ["who is the author of it ?", "and the genre ?", "its owner is ?"]:
        for p in dm.template_paraphrases(text):
            assert "falcon" not in p and "maple" not in p


def test_provider_external_mode_round_trips(world, tmp_path):
    _kg, _config, train, _valid, _test, vocab = world
    turn = train[0].turns[0]
    sidecar = {dm.question_hash(turn.question.raw_text): ["alpha beta ?", "gamma ?"]}
    path = tmp_path / "refs.json"
    path.write_text(json.dumps(sidecar))
    provider = dm.ReformulationProvider("external", vocab, sidecar_path=path)
    refs = provider.provide(turn.question)
    assert [q.raw_text for q in refs] == ["alpha beta ?", "gamma ?"]


def test_provider_external_mode_requires_sidecar(world):
    _kg, _config, _train, _valid, _test, vocab = world
    with pytest.raises(ConfigurationError):
        dm.ReformulationProvider("external", vocab, sidecar_path=None)


def test_provider_rejects_unknown_mode(world):
    _kg, _config, _train, _valid, _test, vocab = world
    with pytest.raises(ConfigurationError):
        dm.ReformulationProvider("llm", vocab)
