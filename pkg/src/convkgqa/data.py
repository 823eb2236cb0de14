"""Conversation corpus: tokenizer, loaders, synthetic generator, reformulations.

The corpus file format is a UTF-8 JSON array of conversations:

    {"id", "domain", "seed_entity", "turns": [{"question", "answers": [keys],
     "human_reformulations": [str], "generated_reformulations": [str],
     "gold_topic": key | null}]}

The synthetic generator builds a relation-templated world with known ground
truth: every question is a surface form of one or two KG relations whose gold
answers sit within two hops of the turn's gold topic entity.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GenerationError, ParseError
from .kg import FORWARD, KnowledgeGraph, out_edges

log = logging.getLogger(__name__)

MAX_QUESTION_TOKENS = 64

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>")

_WORD_RE = re.compile(r"[a-z0-9_']+|[^\sa-z0-9_']")


@dataclass
class Question:
    raw_text: str
    token_ids: tuple[int, ...] = ()
    empty: bool = False

    def content_length(self) -> int:
        return max(len(self.token_ids) - 2, 0)


@dataclass
class Turn:
    question: Question
    answer_keys: list[str]
    gold_answers: set[int] = field(default_factory=set)
    human_reformulations: list[Question] = field(default_factory=list)
    generated_reformulations: list[Question] = field(default_factory=list)
    gold_topic_key: str | None = None
    gold_topic: int | None = None


@dataclass
class Conversation:
    id: str
    domain: str
    seed_entity_key: str
    turns: list[Turn]
    main_topic_entity: int = -1


class Vocabulary:
    """Token map built from the training split; ids are stable across runs."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED_TOKENS) + tokens
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(_WORD_RE.findall(text.lower()))
        return cls(sorted(seen))

    def save(self, path, rng_seed: int = 0, config_hash: str = "") -> None:
        doc = {
            "header": {"format_version": 1, "rng_seed": rng_seed,
                       "config_hash": config_hash},
            "tokens": self.id_to_token[len(RESERVED_TOKENS):],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(list(doc["tokens"]))


def corpus_texts(conversations: list[Conversation]):
    for conv in conversations:
        for turn in conv.turns:
            yield turn.question.raw_text
            for q in turn.human_reformulations:
                yield q.raw_text
            for q in turn.generated_reformulations:
                yield q.raw_text


def tokenize(text: str, vocab: Vocabulary,
             max_len: int = MAX_QUESTION_TOKENS) -> Question:
    """Lowercase, split on word/punctuation boundaries, frame with CLS/SEP."""
    words = _WORD_RE.findall(text.lower())
    empty = not words
    if empty:
        log.warning("tokenize: empty question text %r", text)
    words = words[:max_len - 2]
    ids = (CLS, *[vocab.lookup(w) for w in words], SEP)
    return Question(raw_text=text, token_ids=ids, empty=empty)


def detokenize(question: Question, vocab: Vocabulary) -> list[str]:
    out = []
    for tid in question.token_ids:
        if tid in (PAD, CLS, SEP):
            continue
        out.append(vocab.id_to_token[tid] if tid < len(vocab) else "<unk>")
    return out


def question_hash(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------

def save_conversations(conversations: list[Conversation], path) -> None:
    doc = []
    for conv in conversations:
        doc.append({
            "id": conv.id,
            "domain": conv.domain,
            "seed_entity": conv.seed_entity_key,
            "turns": [
                {
                    "question": turn.question.raw_text,
                    "answers": list(turn.answer_keys),
                    "human_reformulations": [q.raw_text for q in turn.human_reformulations],
                    "generated_reformulations": [q.raw_text for q in turn.generated_reformulations],
                    "gold_topic": turn.gold_topic_key,
                }
                for turn in conv.turns
            ],
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _require(doc, key, where, expected):
    if not isinstance(doc, dict) or key not in doc:
        raise ParseError(f"{where}: missing field '{key}'")
    value = doc[key]
    if not isinstance(value, expected):
        raise ParseError(f"{where}.{key}: expected {expected.__name__}")
    return value


def read_corpus_file(path) -> list[dict]:
    """Parse and schema-check a corpus file without entity/vocab resolution."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be a JSON array")
    for i, conv in enumerate(doc):
        where = f"{path}:conversations[{i}]"
        _require(conv, "id", where, str)
        _require(conv, "domain", where, str)
        _require(conv, "seed_entity", where, str)
        turns = _require(conv, "turns", where, list)
        if not turns:
            raise ParseError(f"{where}.turns: conversation needs at least one turn")
        for j, turn in enumerate(turns):
            tw = f"{where}.turns[{j}]"
            _require(turn, "question", tw, str)
            _require(turn, "answers", tw, list)
            _require(turn, "human_reformulations", tw, list)
            _require(turn, "generated_reformulations", tw, list)
    return doc


def load_conversations(path, vocab: Vocabulary, kg: KnowledgeGraph,
                       max_len: int = MAX_QUESTION_TOKENS,
                       stats: dict | None = None) -> list[Conversation]:
    """Load, tokenize and entity-link a corpus file.

    Conversations whose seed/topic/answer entities cannot be resolved in the
    graph are dropped; the drop count is logged and reported via `stats`.
    """
    doc = read_corpus_file(path)
    conversations: list[Conversation] = []
    dropped = 0
    for raw in doc:
        try:
            conv = _link_conversation(raw, vocab, kg, max_len)
        except KeyError as exc:
            dropped += 1
            log.warning("dropping conversation %s: unresolvable entity %s",
                        raw.get("id"), exc)
            continue
        conversations.append(conv)
    if dropped:
        log.warning("dropped %d conversation(s) with unresolvable entities", dropped)
    if stats is not None:
        stats["dropped"] = dropped
        stats["loaded"] = len(conversations)
    return conversations


def _link_conversation(raw: dict, vocab: Vocabulary, kg: KnowledgeGraph,
                       max_len: int) -> Conversation:
    seed_key = raw["seed_entity"]
    if not kg.has_entity(seed_key):
        raise KeyError(seed_key)
    turns = []
    for t in raw["turns"]:
        answer_ids = set()
        for key in t["answers"]:
            if not kg.has_entity(key):
                raise KeyError(key)
            answer_ids.add(kg.entity_id(key))
        gold_topic_key = t.get("gold_topic")
        gold_topic = None
        if gold_topic_key is not None:
            if not kg.has_entity(gold_topic_key):
                raise KeyError(gold_topic_key)
            gold_topic = kg.entity_id(gold_topic_key)
        turns.append(Turn(
            question=tokenize(t["question"], vocab, max_len),
            answer_keys=list(t["answers"]),
            gold_answers=answer_ids,
            human_reformulations=[tokenize(x, vocab, max_len)
                                  for x in t["human_reformulations"]],
            generated_reformulations=[tokenize(x, vocab, max_len)
                                      for x in t["generated_reformulations"]],
            gold_topic_key=gold_topic_key,
            gold_topic=gold_topic,
        ))
    return Conversation(
        id=raw["id"],
        domain=raw["domain"],
        seed_entity_key=seed_key,
        turns=turns,
        main_topic_entity=kg.entity_id(seed_key),
    )


# ---------------------------------------------------------------------------
# Synthetic world
# ---------------------------------------------------------------------------

RELATION_WORDS = [
    "author", "director", "publisher", "composer", "founder", "capital",
    "spouse", "genre", "producer", "editor", "origin", "mentor", "owner",
    "sequel", "theme",
]

ENTITY_NOUNS = [
    "falcon", "maple", "orion", "harbor", "juniper", "beacon", "onyx",
    "meadow", "ember", "cedar", "zephyr", "quartz", "willow", "summit",
    "raven", "indigo",
]

DOMAINS = ["books", "movies", "music", "sports", "tv"]

NAMED_1HOP = [
    "who is the {rel} of {topic} ?",
    "what is the {rel} of {topic} ?",
    "name the {rel} of {topic}",
    "tell me the {rel} of {topic}",
    "the {rel} of {topic} is ?",
]

PRONOUN_1HOP = [
    "who is the {rel} of it ?",
    "what about its {rel} ?",
    "and the {rel} ?",
    "its {rel} is ?",
    "and what is the {rel} ?",
]

NAMED_2HOP = [
    "who is the {rel2} of the {rel1} of {topic} ?",
    "what is the {rel2} of the {rel1} of {topic} ?",
    "name the {rel2} of the {rel1} of {topic}",
]

PRONOUN_2HOP = [
    "who is the {rel2} of its {rel1} ?",
    "the {rel2} of its {rel1} ?",
    "and the {rel2} of its {rel1} ?",
]


@dataclass
class SynthConfig:
    n_entities: int = 200
    n_relations: int = 8
    edge_prob: float = 0.35
    multi_answer_prob: float = 0.08
    n_conversations: int = 300
    turns_per_conversation: int = 5
    n_human_refs: int = 4
    n_generated_refs: int = 4
    topic_shift_prob: float = 0.3
    two_hop_prob: float = 0.15
    generated_resolve_prob: float = 0.25
    splits: tuple[float, float, float] = (0.6, 0.2, 0.2)


def synth_kg_lines(config: SynthConfig, seed: int) -> list[str]:
    """Random world triples as TSV lines; every entity gets an out-edge."""
    if config.n_relations > len(RELATION_WORDS):
        raise GenerationError(
            f"at most {len(RELATION_WORDS)} relations supported")
    rng = np.random.default_rng(seed)
    n = config.n_entities
    entities = [f"{ENTITY_NOUNS[i % len(ENTITY_NOUNS)]}{i}" for i in range(n)]
    relations = RELATION_WORDS[:config.n_relations]
    lines: list[str] = []
    for e in range(n):
        degree = 0
        for rel in relations:
            if rng.random() < config.edge_prob:
                target = int(rng.integers(0, n - 1))
                if target >= e:
                    target += 1
                lines.append(f"{entities[e]}\t{rel}\t{entities[target]}")
                degree += 1
                if rng.random() < config.multi_answer_prob:
                    second = int(rng.integers(0, n - 1))
                    if second >= e:
                        second += 1
                    if second != target:
                        lines.append(f"{entities[e]}\t{rel}\t{entities[second]}")
        if degree == 0:
            rel = relations[int(rng.integers(0, len(relations)))]
            target = int(rng.integers(0, n - 1))
            if target >= e:
                target += 1
            lines.append(f"{entities[e]}\t{rel}\t{entities[target]}")
    return lines


def _forward_relation_map(kg: KnowledgeGraph) -> dict[int, dict[int, list[int]]]:
    """entity -> relation -> sorted tail list, forward edges only."""
    table: dict[int, dict[int, list[int]]] = {}
    for e in range(kg.n_entities):
        rels: dict[int, list[int]] = {}
        for edge in out_edges(kg, e):
            if edge.kind == FORWARD:
                rels.setdefault(edge.relation_id, []).append(edge.target_entity_id)
        for tails in rels.values():
            tails.sort()
        if rels:
            table[e] = rels
    return table


def synth_generate(kg: KnowledgeGraph, config: SynthConfig, seed: int
                   ) -> tuple[list[Conversation], list[Conversation], list[Conversation]]:
    """Generate conversation splits with known per-turn ground truth.

    Turn-1 questions name the topic entity; continuation turns use pronoun or
    elided templates when the topic is the previous answer, and re-name the
    main topic after a shift. Human reformulations include one fully resolved
    form; test-split turns carry none.
    """
    rng = np.random.default_rng(seed)
    forward = _forward_relation_map(kg)
    candidates = sorted(forward)
    if len(candidates) < 2:
        raise GenerationError("graph too small to seed conversations")

    conversations: list[Conversation] = []
    for c in range(config.n_conversations):
        seed_entity = int(candidates[rng.integers(0, len(candidates))])
        turns = []
        prev_answers: set[int] | None = None
        topic = seed_entity
        for t in range(config.turns_per_conversation):
            if t == 0:
                topic = seed_entity
                same_topic = False
            else:
                chainable = (
                    prev_answers is not None
                    and len(prev_answers) == 1
                    and next(iter(prev_answers)) in forward
                )
                if chainable and rng.random() >= config.topic_shift_prob:
                    topic = next(iter(prev_answers))
                    same_topic = True
                else:
                    topic = seed_entity
                    same_topic = False
            turn = _make_turn(kg, forward, rng, config, topic,
                              named=(t == 0 or not same_topic),
                              same_topic=same_topic)
            turns.append(turn)
            prev_answers = turn.gold_answers
        conversations.append(Conversation(
            id=f"conv-{seed}-{c:05d}",
            domain=DOMAINS[seed_entity % len(DOMAINS)],
            seed_entity_key=kg.entity_keys[seed_entity],
            turns=turns,
            main_topic_entity=seed_entity,
        ))

    order = rng.permutation(len(conversations))
    n_train = int(round(config.splits[0] * len(conversations)))
    n_valid = int(round(config.splits[1] * len(conversations)))
    train = [conversations[i] for i in order[:n_train]]
    valid = [conversations[i] for i in order[n_train:n_train + n_valid]]
    test = [conversations[i] for i in order[n_train + n_valid:]]
    for conv in test:
        for turn in conv.turns:
            turn.human_reformulations = []
    return train, valid, test


def _pick(rng, pool):
    return pool[int(rng.integers(0, len(pool)))]


def _make_turn(kg: KnowledgeGraph, forward, rng, config: SynthConfig,
               topic: int, named: bool, same_topic: bool) -> Turn:
    rels = forward[topic]
    rel_ids = sorted(rels)
    topic_label = kg.entity_labels[topic]

    two_hop = False
    if rng.random() < config.two_hop_prob:
        # Need a middle entity with forward out-edges of its own.
        mids = [(r, tails[0]) for r, tails in sorted(rels.items())
                if len(tails) == 1 and tails[0] in forward]
        if mids:
            two_hop = True
            rel1, mid = mids[int(rng.integers(0, len(mids)))]
            mid_rels = forward[mid]
            rel2 = sorted(mid_rels)[int(rng.integers(0, len(mid_rels)))]
            answers = list(mid_rels[rel2])
    if not two_hop:
        rel = rel_ids[int(rng.integers(0, len(rel_ids)))]
        answers = list(rels[rel])

    if two_hop:
        slots = {"rel1": kg.relation_labels[rel1],
                 "rel2": kg.relation_labels[rel2], "topic": topic_label}
        named_pool, pronoun_pool = NAMED_2HOP, PRONOUN_2HOP
    else:
        slots = {"rel": kg.relation_labels[rel], "topic": topic_label}
        named_pool, pronoun_pool = NAMED_1HOP, PRONOUN_1HOP

    question_pool = named_pool if named else pronoun_pool
    question_text = _pick(rng, question_pool).format(**slots)

    human: list[Question] = []
    # One fully resolved form first, then alternate surface forms.
    resolved_pool = [tpl for tpl in named_pool
                     if tpl.format(**slots) != question_text]
    human.append(Question(_pick(rng, resolved_pool or named_pool).format(**slots)))
    while len(human) < config.n_human_refs:
        pool = named_pool if rng.random() < 0.5 or named else pronoun_pool
        text = _pick(rng, pool).format(**slots)
        human.append(Question(text))

    generated: list[Question] = []
    while len(generated) < config.n_generated_refs:
        if rng.random() < config.generated_resolve_prob:
            pool = named_pool
        else:
            pool = pronoun_pool if not named else named_pool
        generated.append(Question(_pick(rng, pool).format(**slots)))

    return Turn(
        question=Question(question_text),
        answer_keys=[kg.entity_keys[a] for a in sorted(answers)],
        gold_answers=set(answers),
        human_reformulations=human,
        generated_reformulations=generated,
        gold_topic_key=kg.entity_keys[topic],
        gold_topic=topic,
    )


# ---------------------------------------------------------------------------
# Reformulation provider
# ---------------------------------------------------------------------------

_PARAPHRASE_PATTERNS = [
    # (regex, family) — family names the template pool used to re-render.
    (re.compile(r"^(?:who is|what is|name|tell me|and what is) the (\w+) of the (\w+) of (\w+)\b"), "named2"),
    (re.compile(r"^(?:who is|what is|and) the (\w+) of its (\w+)\b"), "pronoun2"),
    (re.compile(r"^the (\w+) of its (\w+)\b"), "pronoun2"),
    (re.compile(r"^(?:who is|what is|name|tell me) the (\w+) of (\w+)\b"), "named1"),
    (re.compile(r"^the (\w+) of (\w+) is\b"), "named1"),
    (re.compile(r"^(?:who is|what is) the (\w+) of it\b"), "pronoun1"),
    (re.compile(r"^what about its (\w+)\b"), "pronoun1"),
    (re.compile(r"^its (\w+) is\b"), "pronoun1"),
    (re.compile(r"^and (?:the|what is the) (\w+)\b"), "pronoun1"),
]


def template_paraphrases(text: str, max_n: int = 4) -> list[str]:
    """Rule-based paraphrases of a templated question.

    Re-renders the parsed relation (and entity, if named) through alternate
    templates of the same family; never introduces new entity tokens. Returns
    an empty list when the text matches no known template.
    """
    norm = " ".join(_WORD_RE.findall(text.lower()))
    for pattern, family in _PARAPHRASE_PATTERNS:
        m = pattern.match(norm)
        if not m:
            continue
        groups = m.groups()
        if family == "named2":
            rel2, rel1, topic = groups
            pool = NAMED_2HOP
            slots = {"rel1": rel1, "rel2": rel2, "topic": topic}
        elif family == "pronoun2":
            rel2, rel1 = groups
            pool = PRONOUN_2HOP
            slots = {"rel1": rel1, "rel2": rel2}
        elif family == "named1":
            if pattern.pattern.startswith("^the"):
                rel, topic = groups
            else:
                rel, topic = groups
            pool = NAMED_1HOP
            slots = {"rel": rel, "topic": topic}
        else:
            rel = groups[0]
            pool = PRONOUN_1HOP
            slots = {"rel": rel}
        out = []
        for tpl in pool:
            candidate = tpl.format(**slots)
            if " ".join(_WORD_RE.findall(candidate.lower())) != norm:
                out.append(candidate)
            if len(out) >= max_n:
                break
        return out
    return []


class ReformulationProvider:
    """Supplies reformulations by mode: dataset, template, or external sidecar."""

    MODES = ("dataset", "template", "external")

    def __init__(self, mode: str, vocab: Vocabulary,
                 sidecar_path=None, max_n: int = 4,
                 max_len: int = MAX_QUESTION_TOKENS):
        if mode not in self.MODES:
            raise ConfigurationError(f"unknown reformulation mode '{mode}'")
        self.mode = mode
        self.vocab = vocab
        self.max_n = max_n
        self.max_len = max_len
        self._sidecar: dict[str, list[str]] | None = None
        if mode == "external":
            if sidecar_path is None or not Path(sidecar_path).exists():
                raise ConfigurationError(
                    f"external reformulation mode needs a sidecar file, got {sidecar_path}")
            with open(sidecar_path, encoding="utf-8") as fh:
                self._sidecar = json.load(fh)

    def provide(self, question: Question, turn: Turn | None = None) -> list[Question]:
        if self.mode == "dataset":
            if turn is None:
                return []
            return [tokenize(q.raw_text, self.vocab, self.max_len)
                    for q in turn.generated_reformulations[:self.max_n]]
        if self.mode == "template":
            texts = template_paraphrases(question.raw_text, self.max_n)
            return [tokenize(t, self.vocab, self.max_len) for t in texts]
        assert self._sidecar is not None
        texts = self._sidecar.get(question_hash(question.raw_text), [])
        return [tokenize(t, self.vocab, self.max_len) for t in texts[:self.max_n]]
