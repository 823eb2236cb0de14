"""Per-turn topic entity decision.

A two-way classifier on the query embedding predicts whether the current
topic equals the previous turn's answer; otherwise the conversation's main
topic entity is used. The classifier is pretrained with binary cross-entropy
before any policy training so the walker starts from stable topics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import QuestionEncoder, derive_seed, encode_conversation
from .errors import ContractError, DimensionError
from .kg import KnowledgeGraph, out_edges
from .numerics import autograd as ag
from .numerics.layers import Linear, ParameterSet
from .numerics.optim import AdamState, adam_step


@dataclass
class SelectorConfig:
    hidden_dim: int = 64
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    threshold: float = 0.5


class TopicSelector:
    """ReLU feed-forward trunk with a 2-way softmax head; index 1 = same topic.

    Inputs are standardised with statistics frozen at pretraining time, so
    the classifier is insensitive to the encoder's output scale.
    """

    def __init__(self, ps: ParameterSet, prefix: str, query_dim: int, hidden_dim: int):
        self.query_dim = query_dim
        self.trunk = Linear(ps, f"{prefix}/trunk", query_dim, hidden_dim)
        self.head = Linear(ps, f"{prefix}/head", hidden_dim, 2)
        self.input_mean = np.zeros(query_dim)
        self.input_scale = np.ones(query_dim)

    def set_normalization(self, mean: np.ndarray, scale: np.ndarray) -> None:
        self.input_mean = np.asarray(mean, dtype=np.float64)
        self.input_scale = np.asarray(scale, dtype=np.float64)

    def _normalize(self, query_vec: ag.Tensor) -> ag.Tensor:
        return ag.mul(ag.sub(query_vec, ag.constant(self.input_mean)),
                      ag.constant(1.0 / self.input_scale))

    def _normalize_rows(self, query_vecs: ag.Tensor) -> ag.Tensor:
        n = query_vecs.values.shape[0]
        return ag.mul(ag.sub(query_vecs, ag.constant(np.tile(self.input_mean, (n, 1)))),
                      ag.constant(np.tile(1.0 / self.input_scale, (n, 1))))

    def logits(self, query_vec: ag.Tensor) -> ag.Tensor:
        return self.head(ag.relu(self.trunk(self._normalize(query_vec))))

    def logits_rows(self, query_vecs: ag.Tensor) -> ag.Tensor:
        return self.head.apply_rows(
            ag.relu(self.trunk.apply_rows(self._normalize_rows(query_vecs))))

    def class_probabilities(self, query_vec) -> np.ndarray:
        vec = query_vec if isinstance(query_vec, ag.Tensor) else ag.constant(query_vec)
        if vec.values.shape != (self.query_dim,):
            raise DimensionError(
                f"query vector shape {vec.values.shape} != ({self.query_dim},)")
        return ag.softmax(self.logits(vec)).values

    def predict_same_topic(self, query_vec) -> float:
        """Probability that the topic equals the previous answer."""
        return float(self.class_probabilities(query_vec)[1])


def build_selector(master_seed: int, query_dim: int,
                   config: SelectorConfig) -> tuple[ParameterSet, TopicSelector]:
    ps = ParameterSet(seed=derive_seed(master_seed, "selector"))
    return ps, TopicSelector(ps, "selector", query_dim, config.hidden_dim)


def select_topic(prob_same: float, previous_answer: int | None, main_topic: int,
                 threshold: float = 0.5, n_entities: int | None = None) -> int:
    """Pick the walk's start entity for this turn.

    Turn 1 (no previous answer) always uses the main topic; later turns use
    the previous answer when the classifier clears the threshold and the
    candidate is a real graph entity.
    """
    if previous_answer is None:
        return main_topic
    if n_entities is not None and not 0 <= previous_answer < n_entities:
        return main_topic
    return previous_answer if prob_same >= threshold else main_topic


def same_topic_labels(conversation) -> list[int | None]:
    """Per-turn labels (turn >= 2): 1 iff the gold topic is a previous answer.

    Turns without gold topic annotations yield None.
    """
    labels: list[int | None] = [None]
    for prev, cur in zip(conversation.turns, conversation.turns[1:]):
        if cur.gold_topic is None:
            labels.append(None)
        else:
            labels.append(1 if cur.gold_topic in prev.gold_answers else 0)
    return labels


def heuristic_same_topic_labels(kg: KnowledgeGraph, conversation) -> list[int | None]:
    """Fallback labels when gold topics are absent: 1 iff some gold answer of
    the turn lies within two hops of the previous answer. Heuristic only."""
    labels: list[int | None] = [None]
    for prev, cur in zip(conversation.turns, conversation.turns[1:]):
        if len(prev.gold_answers) != 1:
            labels.append(0)
            continue
        source = next(iter(prev.gold_answers))
        seen = {source}
        frontier = [source]
        for _ in range(2):
            nxt = []
            for node in frontier:
                for edge in out_edges(kg, node):
                    if edge.target_entity_id not in seen:
                        seen.add(edge.target_entity_id)
                        nxt.append(edge.target_entity_id)
            frontier = nxt
        labels.append(1 if cur.gold_answers & seen else 0)
    return labels


def _collect_examples(conversations, encoder: QuestionEncoder,
                      max_refs: int | None,
                      use_human_refs: bool = True) -> tuple[np.ndarray, np.ndarray]:
    vectors: list[np.ndarray] = []
    labels: list[int] = []
    for conv in conversations:
        per_turn = same_topic_labels(conv)
        outputs = encode_conversation(encoder, conv.turns,
                                      use_human_refs=use_human_refs,
                                      max_refs=max_refs)
        for vec, label in zip(outputs, per_turn):
            if label is None:
                continue
            vectors.append(vec.values.copy())
            labels.append(label)
    if not labels:
        raise ContractError("corpus carries no same-topic labels")
    return np.array(vectors), np.array(labels, dtype=np.float64)


def pretrain_selector(train_conversations, valid_conversations,
                      encoder: QuestionEncoder, master_seed: int,
                      config: SelectorConfig,
                      max_refs: int | None = None,
                      use_human_refs: bool = True
                      ) -> tuple[ParameterSet, TopicSelector, dict]:
    """Fit the classifier on frozen encoder outputs with BCE loss.

    Returns (params, selector, report) where the report carries training
    losses, validation accuracy and the majority-class baseline.
    """
    x_train, y_train = _collect_examples(train_conversations, encoder, max_refs,
                                         use_human_refs)
    ps, selector = build_selector(master_seed, x_train.shape[1], config)
    selector.set_normalization(x_train.mean(axis=0), x_train.std(axis=0) + 1e-8)
    state = AdamState(ps, learning_rate=config.learning_rate,
                      weight_decay=config.weight_decay)
    rng = np.random.default_rng(derive_seed(master_seed, "selector-batches"))
    losses: list[float] = []
    n = x_train.shape[0]
    for _epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            ps.zero_grad()
            logits = selector.logits_rows(ag.constant(x_train[idx]))
            # softmax([z0, z1])[1] == sigmoid(z1 - z0): BCE on the difference
            # equals the two-way softmax cross-entropy.
            diff = ag.sub(ag.matmul(logits, ag.constant(np.array([0.0, 1.0]))),
                          ag.matmul(logits, ag.constant(np.array([1.0, 0.0]))))
            loss = ag.bce_with_logits(diff, y_train[idx])
            ag.backward(loss)
            adam_step(ps, ps.grads(), state)
            epoch_loss += float(loss.values)
            batches += 1
        losses.append(epoch_loss / max(batches, 1))

    if valid_conversations:
        x_valid, y_valid = _collect_examples(valid_conversations, encoder,
                                             max_refs, use_human_refs)
    else:
        x_valid, y_valid = x_train, y_train
    predictions = np.array([
        selector.predict_same_topic(vec) >= config.threshold for vec in x_valid
    ])
    accuracy = float(np.mean(predictions == y_valid.astype(bool)))
    majority = float(max(np.mean(y_valid), 1.0 - np.mean(y_valid)))
    report = {
        "train_losses": losses,
        "valid_accuracy": accuracy,
        "majority_baseline": majority,
        "n_train": int(n),
        "n_valid": int(x_valid.shape[0]),
    }
    return ps, selector, report
