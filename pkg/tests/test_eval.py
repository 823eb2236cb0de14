import numpy as np
import pytest

from convkgqa.agent import RankedAnswer
from convkgqa.bundle import load_bundle
from convkgqa.errors import ConfigurationError, ContractError
from convkgqa import pipeline as pl
from convkgqa.evaluate import (
    ConversationRunner,
    ablation_table,
    evaluate,
    normalize_variant,
    rank_metrics,
)


def _ranked(order):
    return [RankedAnswer(entity_id=e, score=1.0 / (i + 1), source="beam")
            for i, e in enumerate(order)]


def test_gold_at_rank_one_scores_everything():
    metrics = rank_metrics(_ranked([7, 3, 5]), gold={7})
    assert metrics == {"p_at_1": 1.0, "hit_at_3": 1.0, "hit_at_5": 1.0,
                       "hit_at_8": 1.0, "mrr": 1.0}


def test_gold_at_rank_four_by_definition():
    metrics = rank_metrics(_ranked([0, 1, 2, 9, 4]), gold={9})
    assert metrics["p_at_1"] == 0.0
    assert metrics["hit_at_3"] == 0.0
    assert metrics["hit_at_5"] == 1.0
    assert metrics["hit_at_8"] == 1.0
    assert metrics["mrr"] == 0.25


def test_empty_gold_is_contract_error():
    with pytest.raises(ContractError):
        rank_metrics(_ranked([1, 2]), gold=set())


def test_rank_metrics_match_brute_force_scan():
    rng = np.random.default_rng(4)
    n = 30
    for _ in range(1000):
        order = rng.permutation(n).tolist()
        gold = set(rng.choice(n, size=rng.integers(1, 4), replace=False).tolist())
        metrics = rank_metrics(_ranked(order), gold)
        # Independent scan oracle.
        positions = [i + 1 for i, e in enumerate(order) if e in gold]
        first = min(positions)
        assert metrics["mrr"] == pytest.approx(1.0 / first)
        for k, key in ((1, "p_at_1"), (3, "hit_at_3"), (5, "hit_at_5"),
                       (8, "hit_at_8")):
            assert metrics[key] == (1.0 if first <= k else 0.0)


def test_hits_are_monotone_in_k():
    rng = np.random.default_rng(9)
    for _ in range(200):
        order = rng.permutation(12).tolist()
        gold = {int(rng.integers(0, 12))}
        metrics = rank_metrics(_ranked(order), gold)
        assert metrics["p_at_1"] <= metrics["hit_at_3"] <= metrics["hit_at_5"] \
            <= metrics["hit_at_8"]
        assert metrics["p_at_1"] <= metrics["mrr"] <= 1.0


def test_rank_metrics_invariant_under_monotone_score_transform():
    order = [4, 2, 8, 0, 1]
    base = [RankedAnswer(entity_id=e, score=s, source="beam")
            for e, s in zip(order, [0.9, 0.5, 0.3, 0.2, 0.1])]
    squashed = [RankedAnswer(entity_id=r.entity_id, score=r.score ** 3,
                             source=r.source) for r in base]
    assert rank_metrics(base, {8}) == rank_metrics(squashed, {8})


class _OracleRunner:
    """Stub runner whose rank order is injected per turn."""

    def __init__(self, order_fn):
        self.order_fn = order_fn

    def run_conversation(self, conversation):
        from convkgqa.evaluate import TurnResult

        results = []
        for i, turn in enumerate(conversation.turns):
            order = self.order_fn(turn)
            results.append(TurnResult(
                turn_index=i, topic_used=0, ranked=_ranked(order),
                query_values=np.zeros(1)))
        return results


def test_evaluate_with_perfect_oracle_is_all_ones(tiny_workdir, monkeypatch):
    config, root = tiny_workdir
    _graph, _vocab, splits = pl._load_world(config, root)
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    n = bundle.graph.n_entities

    def perfect(turn):
        gold = sorted(turn.gold_answers)
        rest = [e for e in range(n) if e not in turn.gold_answers]
        return gold + rest

    monkeypatch.setattr(
        "convkgqa.evaluate.ConversationRunner.run_conversation",
        lambda self, conv: _OracleRunner(perfect).run_conversation(conv))
    report = evaluate(bundle, splits["test"])
    for value in report.overall.values():
        assert value == 1.0


def test_evaluate_with_reversed_oracle_matches_closed_form(tiny_workdir, monkeypatch):
    config, root = tiny_workdir
    _graph, _vocab, splits = pl._load_world(config, root)
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    n = bundle.graph.n_entities

    def reversed_oracle(turn):
        gold = sorted(turn.gold_answers)
        rest = [e for e in range(n) if e not in turn.gold_answers]
        return rest + gold

    monkeypatch.setattr(
        "convkgqa.evaluate.ConversationRunner.run_conversation",
        lambda self, conv: _OracleRunner(reversed_oracle).run_conversation(conv))
    report = evaluate(bundle, splits["test"])
    # First gold sits at rank n - |gold| + 1 for every turn.
    expected_rr = []
    for conv in splits["test"]:
        for turn in conv.turns:
            if turn.gold_answers:
                expected_rr.append(1.0 / (n - len(turn.gold_answers) + 1))
    assert report.overall["mrr"] == pytest.approx(float(np.mean(expected_rr)))
    assert report.overall["p_at_1"] == 0.0


def test_evaluate_report_structure_and_determinism(tiny_workdir):
    config, root = tiny_workdir
    _graph, _vocab, splits = pl._load_world(config, root)
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    first = evaluate(bundle, splits["test"])
    second = evaluate(bundle, splits["test"])
    assert first.to_dict() == second.to_dict()
    assert first.overall["hit_at_3"] <= first.overall["hit_at_5"] \
        <= first.overall["hit_at_8"]
    assert first.counts["turns_evaluated"] > 0
    assert first.reference["convqa"]["hit_at_5"] == 0.417
    assert first.reference["convqa"]["mrr"] == 0.337
    assert first.reference["convref"]["hit_at_5"] == 0.477
    assert first.reference["convref"]["mrr"] == 0.353
    assert first.reference["selector_accuracy"] == 0.832
    assert first.config_hash == config.config_hash()


def test_empty_gold_turns_are_skipped_with_counter(tiny_workdir):
    config, root = tiny_workdir
    _graph, _vocab, splits = pl._load_world(config, root)
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    conversations = [splits["test"][0]]
    conversations[0].turns[1].gold_answers = set()
    report = evaluate(bundle, conversations)
    assert report.counts["turns_skipped_empty_gold"] == 1
    assert report.counts["turns_evaluated"] == len(conversations[0].turns) - 1


def test_runner_beam_fallback_partition_every_turn(tiny_workdir):
    config, root = tiny_workdir
    _graph, _vocab, splits = pl._load_world(config, root)
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    runner = ConversationRunner(bundle)
    for conv in splits["test"][:3]:
        for result in runner.run_conversation(conv):
            ids = sorted(r.entity_id for r in result.ranked)
            assert ids == list(range(bundle.graph.n_entities))


def test_teacher_force_changes_previous_answer_feeding(tiny_workdir):
    config, root = tiny_workdir
    _graph, _vocab, splits = pl._load_world(config, root)
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    conv = splits["valid"][0]
    forced = ConversationRunner(bundle, teacher_force=True).run_conversation(conv)
    free = ConversationRunner(bundle, teacher_force=False).run_conversation(conv)
    assert len(forced) == len(free) == len(conv.turns)


def test_unknown_ref_mode_rejected(tiny_workdir):
    config, root = tiny_workdir
    bundle = load_bundle(root, config, need=("complex", "teacher", "student",
                                             "selector", "policy", "projection"))
    with pytest.raises(ConfigurationError):
        ConversationRunner(bundle, ref_mode="llm")


def test_variant_normalization_and_table():
    assert normalize_variant("human_teacher_student") == "teacher_student"
    assert normalize_variant("unique_edge_off") == "unique_edge_off"
    with pytest.raises(ConfigurationError):
        normalize_variant("nope")
    rows = {
        "teacher_student": {"p_at_1": 0.5, "hit_at_3": 0.6, "hit_at_5": 0.7,
                            "hit_at_8": 0.8, "mrr": 0.6},
        "generated_only": {"p_at_1": 0.4, "hit_at_3": 0.5, "hit_at_5": 0.6,
                           "hit_at_8": 0.7, "mrr": 0.5},
    }
    table = ablation_table(rows)
    lines = table.splitlines()
    assert len(lines) == 3
    assert lines[0].split() == ["variant", "p_at_1", "hit_at_3", "hit_at_5",
                                "hit_at_8", "mrr"]
