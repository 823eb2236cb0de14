"""Ranking metrics and full-pipeline evaluation.

Evaluation replays each conversation turn by turn exactly as a live session
would: the ranked answer of turn t feeds topic selection at turn t+1 (a
teacher-forcing switch substitutes gold answers instead). The same runner
backs the HTTP service, which is what makes offline and online replies
bit-identical for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agent import RankedAnswer, beam_infer
from .bundle import ModelBundle
from .data import Question, ReformulationProvider, Turn, tokenize
from .encoder import ConversationEncoderState
from .errors import ConfigurationError, ContractError
from .selector import select_topic

REFERENCE_BENCHMARKS = {
    "note": ("published full-scale reference points; not reproduced at desk"
             " scale"),
    "convqa": {"hit_at_5": 0.417, "mrr": 0.337},
    "convref": {"hit_at_5": 0.477, "mrr": 0.353},
    "unique_edge_ablation": {"p_at_1_without": 0.227, "p_at_1_with": 0.265,
                             "mrr_without": 0.330, "mrr_with": 0.353,
                             "average_gain": 0.022},
    "teacher_student": {"generated_only_p_at_1": 0.212,
                        "teacher_student_p_at_1": 0.265},
    "selector_accuracy": 0.832,
}

METRIC_KEYS = ("p_at_1", "hit_at_3", "hit_at_5", "hit_at_8", "mrr")


def rank_metrics(ranked: list[RankedAnswer], gold: set[int]) -> dict[str, float]:
    """Top-rank precision, hit rates and reciprocal rank for one question."""
    if not gold:
        raise ContractError("rank_metrics requires a nonempty gold set")
    first_gold_rank = None
    for position, answer in enumerate(ranked, start=1):
        if answer.entity_id in gold:
            first_gold_rank = position
            break
    rr = 0.0 if first_gold_rank is None else 1.0 / first_gold_rank

    def hit(k: int) -> float:
        return 1.0 if first_gold_rank is not None and first_gold_rank <= k else 0.0

    return {
        "p_at_1": hit(1),
        "hit_at_3": hit(3),
        "hit_at_5": hit(5),
        "hit_at_8": hit(8),
        "mrr": rr,
    }


@dataclass
class TurnResult:
    turn_index: int
    topic_used: int
    ranked: list[RankedAnswer]
    query_values: np.ndarray

    @property
    def predicted(self) -> int:
        return self.ranked[0].entity_id


@dataclass
class RunnerSession:
    encoder_state: ConversationEncoderState
    main_topic: int
    previous_answer: int | None = None
    previous_gold: set[int] | None = None
    turn_index: int = 0


class ConversationRunner:
    """Turn-by-turn deployment loop shared by evaluation and the service."""

    def __init__(self, bundle: ModelBundle, *, encoder_role: str = "student",
                 ref_mode: str = "dataset", teacher_force: bool = False,
                 beam_width: int | None = None, max_hops: int | None = None,
                 max_refs: int | None = None):
        if ref_mode not in ("dataset", "dataset_human", "template", "none"):
            raise ConfigurationError(f"unknown reformulation mode '{ref_mode}'")
        self.bundle = bundle
        self.encoder = bundle.encoder_for(encoder_role)
        if bundle.policy is None or bundle.table is None or bundle.projection is None:
            raise ContractError("runner needs a bundle with policy and embeddings")
        self.ref_mode = ref_mode
        self.teacher_force = teacher_force
        self.beam_width = beam_width or bundle.config.rl_teacher.beam_width
        self.max_hops = max_hops or bundle.config.rl_teacher.max_hops
        self.max_refs = bundle.config.max_refs if max_refs is None else max_refs
        self._template_provider = ReformulationProvider(
            "template", bundle.vocab, max_n=self.max_refs,
            max_len=bundle.config.encoder.max_len)

    def start(self, main_topic: int) -> RunnerSession:
        return RunnerSession(encoder_state=self.encoder.start_conversation(),
                             main_topic=main_topic)

    def _reformulations(self, question: Question,
                        turn: Turn | None,
                        explicit: list[str] | None) -> list[Question]:
        if explicit is not None:
            return [tokenize(text, self.bundle.vocab,
                             self.bundle.config.encoder.max_len)
                    for text in explicit[:self.max_refs]]
        if self.ref_mode == "dataset" and turn is not None:
            return turn.generated_reformulations[:self.max_refs]
        if self.ref_mode == "dataset_human" and turn is not None:
            return turn.human_reformulations[:self.max_refs]
        if self.ref_mode == "template":
            return self._template_provider.provide(question)
        return []

    def ask(self, session: RunnerSession, question: Question,
            turn: Turn | None = None,
            reformulations: list[str] | None = None) -> TurnResult:
        refs = self._reformulations(question, turn, reformulations)
        question_vec = self.encoder.encode_context(question)
        ref_vecs = [self.encoder.encode_context(q) for q in refs]
        fused = self.encoder.fuse(question_vec, ref_vecs)
        query_vec, session.encoder_state = self.encoder.history_step(
            fused, session.encoder_state)
        query_values = query_vec.values

        if session.turn_index == 0 or self.bundle.selector is None:
            topic = session.main_topic
        else:
            if self.teacher_force and session.previous_gold:
                candidate = min(session.previous_gold)
            else:
                candidate = session.previous_answer
            prob = self.bundle.selector.predict_same_topic(query_values)
            topic = select_topic(prob, candidate, session.main_topic,
                                 self.bundle.config.selector.threshold,
                                 n_entities=self.bundle.graph.n_entities)

        ranked = beam_infer(self.bundle.policy, query_values, topic,
                            k=self.beam_width, max_hops=self.max_hops,
                            table=self.bundle.table,
                            projection=self.bundle.projection)
        result = TurnResult(turn_index=session.turn_index, topic_used=topic,
                            ranked=ranked, query_values=query_values)
        session.previous_answer = result.predicted
        session.previous_gold = turn.gold_answers if turn is not None else None
        session.turn_index += 1
        return result

    def run_conversation(self, conversation) -> list[TurnResult]:
        session = self.start(conversation.main_topic_entity)
        return [self.ask(session, turn.question, turn) for turn in conversation.turns]


@dataclass
class EvalReport:
    overall: dict[str, float]
    per_domain: dict[str, dict[str, float]]
    counts: dict[str, int]
    config_hash: str = ""
    seed: int = 0
    reference: dict = field(default_factory=lambda: dict(REFERENCE_BENCHMARKS))

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_domain": self.per_domain,
            "counts": self.counts,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "reference": self.reference,
        }

    def text_table(self) -> str:
        header = f"{'split':<12}" + "".join(f"{k:>10}" for k in METRIC_KEYS)
        lines = [header]
        row = f"{'overall':<12}" + "".join(
            f"{self.overall[k]:>10.4f}" for k in METRIC_KEYS)
        lines.append(row)
        for domain in sorted(self.per_domain):
            metrics = self.per_domain[domain]
            lines.append(f"{domain:<12}" + "".join(
                f"{metrics[k]:>10.4f}" for k in METRIC_KEYS))
        return "\n".join(lines)


def evaluate(bundle: ModelBundle, conversations, *, encoder_role: str = "student",
             ref_mode: str = "dataset", teacher_force: bool = False,
             beam_width: int | None = None, max_refs: int | None = None) -> EvalReport:
    """Aggregate rank metrics over every turn with a nonempty gold set."""
    conversations = list(conversations)
    runner = ConversationRunner(bundle, encoder_role=encoder_role,
                                ref_mode=ref_mode, teacher_force=teacher_force,
                                beam_width=beam_width, max_refs=max_refs)
    sums: dict[str, float] = {k: 0.0 for k in METRIC_KEYS}
    domain_sums: dict[str, dict[str, float]] = {}
    domain_counts: dict[str, int] = {}
    evaluated = 0
    skipped = 0
    for conversation in conversations:
        results = runner.run_conversation(conversation)
        for turn, result in zip(conversation.turns, results):
            if not turn.gold_answers:
                skipped += 1
                continue
            metrics = rank_metrics(result.ranked, turn.gold_answers)
            evaluated += 1
            for key in METRIC_KEYS:
                sums[key] += metrics[key]
            bucket = domain_sums.setdefault(
                conversation.domain, {k: 0.0 for k in METRIC_KEYS})
            for key in METRIC_KEYS:
                bucket[key] += metrics[key]
            domain_counts[conversation.domain] = \
                domain_counts.get(conversation.domain, 0) + 1
    overall = {k: (sums[k] / evaluated if evaluated else 0.0) for k in METRIC_KEYS}
    per_domain = {
        domain: {k: bucket[k] / domain_counts[domain] for k in METRIC_KEYS}
        for domain, bucket in domain_sums.items()
    }
    return EvalReport(
        overall=overall,
        per_domain=per_domain,
        counts={"turns_evaluated": evaluated, "turns_skipped_empty_gold": skipped,
                "conversations": len(conversations)},
        config_hash=bundle.config.config_hash(),
        seed=bundle.config.seed,
    )


ABLATION_VARIANTS = (
    "teacher_student",
    "generated_only",
    "no_reformulation",
    "unique_edge_on",
    "unique_edge_off",
    "train_test_mismatch",
)

VARIANT_ALIASES = {"human_teacher_student": "teacher_student"}


def normalize_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in ABLATION_VARIANTS:
        raise ConfigurationError(
            f"unknown ablation variant '{name}'; choose from {ABLATION_VARIANTS}")
    return name


def ablation_table(rows: dict[str, dict[str, float]]) -> str:
    header = f"{'variant':<20}" + "".join(f"{k:>10}" for k in METRIC_KEYS)
    lines = [header]
    for variant in rows:
        metrics = rows[variant]
        lines.append(f"{variant:<20}" + "".join(
            f"{metrics[k]:>10.4f}" for k in METRIC_KEYS))
    return "\n".join(lines)
