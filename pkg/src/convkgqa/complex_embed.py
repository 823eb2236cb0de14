"""Complex-valued KG embeddings: training, fact scoring, fallback ranking.

The fact score is the real part of the trilinear product with the head slot
conjugated: Re(<q, t, conj(h)>). A question enters the same form through a
learned linear projection of its encoder vector onto (real, imaginary)
relation-slot halves; sigmoid squashing turns the unbounded score into a
probability for the soft reward and the fallback ranker.

Dimensions: `dim` counts complex components, so the concatenated real feature
vector used elsewhere (policy action rows) has width 2*dim.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, EmptyGraphError
from .kg import KnowledgeGraph
from .numerics import autograd as ag
from .numerics.layers import ParameterSet
from .numerics.optim import AdamState, adam_step


@dataclass
class ComplexConfig:
    dim: int = 100                # complex components; real feature width is 2*dim
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 0.005
    negatives_per_positive: int = 10
    weight_decay: float = 0.0
    holdout_fraction: float = 0.0
    seed: int = 0


@dataclass
class ComplexEmbeddingTable:
    entity_re: np.ndarray
    entity_im: np.ndarray
    relation_re: np.ndarray
    relation_im: np.ndarray

    @property
    def dim(self) -> int:
        return self.entity_re.shape[1]

    @property
    def feature_dim(self) -> int:
        return 2 * self.dim

    def entity_features(self) -> np.ndarray:
        """(n_entities, 2*dim) real feature matrix: concat(re, im)."""
        return np.hstack([self.entity_re, self.entity_im])

    def relation_features(self) -> np.ndarray:
        return np.hstack([self.relation_re, self.relation_im])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {
            "complex/entity_re": self.entity_re,
            "complex/entity_im": self.entity_im,
            "complex/relation_re": self.relation_re,
            "complex/relation_im": self.relation_im,
        }

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "ComplexEmbeddingTable":
        return cls(
            entity_re=state["complex/entity_re"],
            entity_im=state["complex/entity_im"],
            relation_re=state["complex/relation_re"],
            relation_im=state["complex/relation_im"],
        )


@dataclass
class TrainRecord:
    epoch_losses: list[float] = field(default_factory=list)

    def fraction_decreasing(self, tolerance: float = 0.0) -> float:
        """Share of epoch transitions where the mean loss did not increase."""
        if len(self.epoch_losses) < 2:
            return 1.0
        drops = sum(
            1 for prev, cur in zip(self.epoch_losses, self.epoch_losses[1:])
            if cur <= prev + tolerance
        )
        return drops / (len(self.epoch_losses) - 1)


def complex_score(q_re, q_im, head_id: int, tail_id: int,
                  table: ComplexEmbeddingTable) -> float:
    """Re(<q, tail, conj(head)>) for a query vector in the relation slot."""
    q_re = np.asarray(q_re, dtype=np.float64)
    q_im = np.asarray(q_im, dtype=np.float64)
    if q_re.shape != (table.dim,) or q_im.shape != (table.dim,):
        raise DimensionError(
            f"query parts must have shape ({table.dim},), got {q_re.shape}/{q_im.shape}")
    h_re, h_im = table.entity_re[head_id], table.entity_im[head_id]
    t_re, t_im = table.entity_re[tail_id], table.entity_im[tail_id]
    real = (q_re * t_re - q_im * t_im) * h_re + (q_re * t_im + q_im * t_re) * h_im
    return float(real.sum())


def score_all_tails(q_re, q_im, head_id: int, table: ComplexEmbeddingTable) -> np.ndarray:
    """Vectorised Re(<q, tail, conj(head)>) over every entity in the tail slot."""
    h_re, h_im = table.entity_re[head_id], table.entity_im[head_id]
    u = q_re * h_re + q_im * h_im
    v = q_re * h_im - q_im * h_re
    return table.entity_re @ u + table.entity_im @ v


class QuestionProjection:
    """Linear map from an encoder query vector to (real, imaginary) halves."""

    def __init__(self, weight: np.ndarray):
        if weight.ndim != 2 or weight.shape[0] % 2 != 0:
            raise DimensionError(f"projection weight shape {weight.shape}")
        self.weight = weight

    @property
    def query_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def complex_dim(self) -> int:
        return self.weight.shape[0] // 2

    def project(self, query_vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        query_vec = np.asarray(query_vec, dtype=np.float64)
        if query_vec.shape != (self.query_dim,):
            raise DimensionError(
                f"query vector shape {query_vec.shape} != ({self.query_dim},)")
        both = self.weight @ query_vec
        d = self.complex_dim
        return both[:d], both[d:]


def answer_probability(query_vec, topic_entity: int, candidate: int,
                       table: ComplexEmbeddingTable,
                       projection: QuestionProjection) -> float:
    """sigmoid(Re(<proj(query), candidate, conj(topic)>)), strictly in (0, 1)."""
    q_re, q_im = projection.project(query_vec)
    score = complex_score(q_re, q_im, topic_entity, candidate, table)
    return float(1.0 / (1.0 + np.exp(-score)))


def answer_probabilities_all(query_vec, topic_entity: int,
                             table: ComplexEmbeddingTable,
                             projection: QuestionProjection) -> np.ndarray:
    q_re, q_im = projection.project(query_vec)
    scores = score_all_tails(q_re, q_im, topic_entity, table)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-scores))


def fallback_rank(query_vec, topic_entity: int, excluded: set[int],
                  table: ComplexEmbeddingTable,
                  projection: QuestionProjection) -> list[tuple[int, float]]:
    """Non-excluded entities ordered by answer probability, ids break ties."""
    probs = answer_probabilities_all(query_vec, topic_entity, table, projection)
    n = probs.shape[0]
    ids = np.arange(n)
    keep = np.array([i not in excluded for i in ids], dtype=bool)
    kept_ids = ids[keep]
    kept_probs = probs[keep]
    order = np.lexsort((kept_ids, -kept_probs))
    return [(int(kept_ids[i]), float(kept_probs[i])) for i in order]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _batch_score(ps: ParameterSet, heads, rels, tails) -> ag.Tensor:
    """Tape-built batch of trilinear scores for (head, relation, tail) rows."""
    h_re = ag.take_rows(ps["complex/entity_re"], heads)
    h_im = ag.take_rows(ps["complex/entity_im"], heads)
    r_re = ag.take_rows(ps["complex/relation_re"], rels)
    r_im = ag.take_rows(ps["complex/relation_im"], rels)
    t_re = ag.take_rows(ps["complex/entity_re"], tails)
    t_im = ag.take_rows(ps["complex/entity_im"], tails)
    real_part = ag.add(
        ag.mul(ag.sub(ag.mul(r_re, t_re), ag.mul(r_im, t_im)), h_re),
        ag.mul(ag.add(ag.mul(r_re, t_im), ag.mul(r_im, t_re)), h_im),
    )
    ones = ag.constant(np.ones(real_part.values.shape[1]))
    return ag.matmul(real_part, ones)


def train_complex(graph: KnowledgeGraph, config: ComplexConfig
                  ) -> tuple[ComplexEmbeddingTable, TrainRecord, list[tuple[int, int, int]]]:
    """Fit the embedding tables by logistic loss with corruption negatives.

    Returns (table, per-epoch loss record, held-out forward triples). The
    held-out list is empty unless config.holdout_fraction > 0.
    """
    if not graph.augmented:
        raise ContractError("train_complex requires an augmented graph")
    if graph.n_entities == 0 or graph.n_edges == 0:
        raise EmptyGraphError("cannot train embeddings on an empty graph")
    rng = np.random.default_rng(config.seed)

    forward = [(h, r, t) for h, r, t, uid in graph.triples if uid < graph.n_base_triples]
    holdout: list[tuple[int, int, int]] = []
    if config.holdout_fraction > 0 and len(forward) > 1:
        n_hold = max(1, int(len(forward) * config.holdout_fraction))
        hold_idx = set(rng.choice(len(forward), size=n_hold, replace=False).tolist())
        holdout = [forward[i] for i in sorted(hold_idx)]
        held_pairs = set(holdout)
    else:
        held_pairs = set()

    # Inverse twins of held-out triples would leak the held-out answers.
    n_base_rel = (len(graph.relation_labels) - 1) // 2
    inverse_of_held = {(t, r + n_base_rel, h) for h, r, t in held_pairs}
    train_triples = [
        (h, r, t) for h, r, t, _uid in graph.triples
        if (h, r, t) not in held_pairs and (h, r, t) not in inverse_of_held
    ]

    triples = np.array(train_triples, dtype=np.intp)
    n_entities = graph.n_entities
    n_relations = graph.n_relations

    ps = ParameterSet(seed=config.seed)
    ps.add("complex/entity_re", (n_entities, config.dim))
    ps.add("complex/entity_im", (n_entities, config.dim))
    ps.add("complex/relation_re", (n_relations, config.dim))
    ps.add("complex/relation_im", (n_relations, config.dim))
    state = AdamState(ps, learning_rate=config.learning_rate,
                      weight_decay=config.weight_decay)

    k = config.negatives_per_positive
    record = TrainRecord()
    n = triples.shape[0]
    for _epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            batch = triples[perm[start:start + config.batch_size]]
            b = batch.shape[0]
            pos_h, pos_r, pos_t = batch[:, 0], batch[:, 1], batch[:, 2]
            neg_h = np.repeat(pos_h, k)
            neg_r = np.repeat(pos_r, k)
            neg_t = np.repeat(pos_t, k)
            corrupt_head = rng.random(b * k) < 0.5
            random_entities = rng.integers(0, n_entities, size=b * k)
            neg_h = np.where(corrupt_head, random_entities, neg_h)
            neg_t = np.where(~corrupt_head, random_entities, neg_t)
            heads = np.concatenate([pos_h, neg_h])
            rels = np.concatenate([pos_r, neg_r])
            tails = np.concatenate([pos_t, neg_t])
            labels = np.concatenate([np.ones(b), np.zeros(b * k)])
            ps.zero_grad()
            loss = ag.bce_with_logits(_batch_score(ps, heads, rels, tails), labels)
            ag.backward(loss)
            adam_step(ps, ps.grads(), state)
            epoch_loss += float(loss.values)
            n_batches += 1
        record.epoch_losses.append(epoch_loss / max(n_batches, 1))

    table = ComplexEmbeddingTable(
        entity_re=ps["complex/entity_re"].values.copy(),
        entity_im=ps["complex/entity_im"].values.copy(),
        relation_re=ps["complex/relation_re"].values.copy(),
        relation_im=ps["complex/relation_im"].values.copy(),
    )
    return table, record, holdout


@dataclass
class ProjectionConfig:
    epochs: int = 50
    learning_rate: float = 0.01
    negatives_per_positive: int = 10
    weight_decay: float = 0.0
    seed: int = 0


def pretrain_projection(query_vecs: np.ndarray, topics: np.ndarray,
                        answers: np.ndarray, table: ComplexEmbeddingTable,
                        config: ProjectionConfig,
                        graph: KnowledgeGraph | None = None
                        ) -> tuple[QuestionProjection, TrainRecord]:
    """Fit the query projection by logistic loss on gold facts.

    Each (topic, query, answer) row is a positive; negatives corrupt the
    answer with random entities, plus other neighbours of the same topic when
    a graph is supplied (so topic adjacency alone cannot explain the facts).
    Embedding tables stay frozen.
    """
    query_vecs = np.asarray(query_vecs, dtype=np.float64)
    if query_vecs.ndim != 2:
        raise DimensionError("query_vecs must be (n, query_dim)")
    n, d_q = query_vecs.shape
    if n == 0:
        raise ContractError("projection pretraining needs at least one fact")
    rng = np.random.default_rng(config.seed)
    n_entities = table.entity_re.shape[0]
    d = table.dim

    sibling_pools: list[np.ndarray] | None = None
    if graph is not None:
        from .kg import out_edges

        pool_by_topic: dict[int, np.ndarray] = {}
        for topic in set(int(t) for t in topics):
            pool_by_topic[topic] = np.array(
                [e.target_entity_id for e in out_edges(graph, topic)],
                dtype=np.intp)
        sibling_pools = [pool_by_topic[int(t)] for t in topics]

    ps = ParameterSet(seed=config.seed)
    ps.add("projection/weight", (2 * d, d_q), fan_in=d_q)
    state = AdamState(ps, learning_rate=config.learning_rate,
                      weight_decay=config.weight_decay)

    h_re_const = ag.constant(table.entity_re)
    h_im_const = ag.constant(table.entity_im)
    k = config.negatives_per_positive
    record = TrainRecord()
    for _epoch in range(config.epochs):
        neg_answers = rng.integers(0, n_entities, size=n * k)
        if sibling_pools is not None:
            hard = np.empty(n * k, dtype=np.intp)
            for i, pool in enumerate(sibling_pools):
                picks = rng.integers(0, pool.size, size=k)
                hard[i * k:(i + 1) * k] = pool[picks]
            # Never relabel the fact's own answer as a negative.
            gold_repeated = np.repeat(answers, k)
            use_hard = (rng.random(n * k) < 0.5) & (hard != gold_repeated)
            neg_answers = np.where(use_hard, hard, neg_answers)
        all_topics = np.concatenate([topics, np.repeat(topics, k)])
        all_answers = np.concatenate([answers, neg_answers])
        queries = np.vstack([query_vecs, np.repeat(query_vecs, k, axis=0)])
        labels = np.concatenate([np.ones(n), np.zeros(n * k)])
        ps.zero_grad()
        projected = ag.matmul(ag.constant(queries), ag.transpose(ps["projection/weight"]))
        q_re = ag.slice_cols(projected, 0, d)
        q_im = ag.slice_cols(projected, d, 2 * d)
        h_re = ag.take_rows(h_re_const, all_topics)
        h_im = ag.take_rows(h_im_const, all_topics)
        t_re = ag.take_rows(h_re_const, all_answers)
        t_im = ag.take_rows(h_im_const, all_answers)
        real_part = ag.add(
            ag.mul(ag.sub(ag.mul(q_re, t_re), ag.mul(q_im, t_im)), h_re),
            ag.mul(ag.add(ag.mul(q_re, t_im), ag.mul(q_im, t_re)), h_im),
        )
        ones = ag.constant(np.ones(d))
        loss = ag.bce_with_logits(ag.matmul(real_part, ones), labels)
        ag.backward(loss)
        adam_step(ps, ps.grads(), state)
        record.epoch_losses.append(float(loss.values))
    return QuestionProjection(ps["projection/weight"].values.copy()), record


def relation_score_all_tails(table: ComplexEmbeddingTable, head_id: int,
                             relation_id: int) -> np.ndarray:
    """Link-prediction scores over all tails for a (head, relation) pair."""
    return score_all_tails(table.relation_re[relation_id],
                           table.relation_im[relation_id], head_id, table)


def filtered_hits_at_k(table: ComplexEmbeddingTable, graph: KnowledgeGraph,
                       holdout: list[tuple[int, int, int]], k: int = 10) -> float:
    """Filtered tail-prediction Hit@k over held-out forward triples."""
    known: dict[tuple[int, int], set[int]] = {}
    for h, r, t, _uid in graph.triples:
        known.setdefault((h, r), set()).add(t)
    hits = 0
    for h, r, t in holdout:
        scores = relation_score_all_tails(table, h, r)
        mask = known.get((h, r), set()) - {t}
        scores = scores.copy()
        for other in mask:
            scores[other] = -np.inf
        rank = int((scores > scores[t]).sum()) + 1
        if rank <= k:
            hits += 1
    return hits / max(len(holdout), 1)
