"""Graph-walking answer agent.

The walker starts at the turn's topic entity and repeatedly picks an outgoing
edge (inverse edges and a stop self-loop included). Each candidate action is
the concatenation of its relation features, its per-edge learned embedding
and its target-entity features; the policy scores the action matrix against a
projection of (current entity, query embedding, walk history) and samples
from the softmax. Training follows the score-function estimator over sampled
rollouts with entropy regularisation; inference runs a deterministic beam
over fixed-length action sequences, with the embedding ranker filling in all
entities the beam never reached.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .complex_embed import (
    ComplexEmbeddingTable,
    QuestionProjection,
    answer_probability,
    answer_probabilities_all,
    fallback_rank,
)
from .data import Conversation
from .encoder import QuestionEncoder, encode_conversation
from .errors import ContractError, DimensionError, GraphLookupError, NumericError
from .kg import KnowledgeGraph, out_edges
from .numerics import autograd as ag
from .numerics.layers import Linear, LstmCell, ParameterSet
from .numerics.optim import AdamState, adam_step, clip_gradients
from .selector import TopicSelector, same_topic_labels, select_topic


@dataclass
class RlConfig:
    rollouts: int = 20
    gamma: float = 1.0
    entropy_weight: float = 0.01
    max_hops: int = 3
    learning_rate: float = 2e-5
    batch_size: int = 12
    epochs: int = 20
    beam_width: int = 20
    weight_decay: float = 1.0
    max_actions: int = 200
    hidden_dim: int = 200
    history_dim: int = 200
    aux_cue_weight: float = 1.0
    distill_weight: float = 1.0
    # Dense fact-scoring auxiliary during encoder pretraining: the query
    # embedding must rank gold tails above sampled corruptions through a
    # throwaway projection, which grounds the relation in the embedding far
    # faster than the sparse walk reward alone.
    fact_aux_weight: float = 1.0
    fact_aux_negatives: int = 8
    # Mean-rollout baseline: variance reduction for the score-function
    # estimator; the expected gradient is unchanged.
    advantage_baseline: bool = True
    # Global-norm gradient clipping; rare low-probability actions otherwise
    # produce spikes that wreck the recurrent encoder.
    grad_clip_norm: float = 1.0
    # Epochs trained on the auxiliary objectives alone (no rollouts) before
    # policy-gradient epochs begin; cheap encoder bootstrap.
    warmup_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.rollouts < 1:
            raise ContractError("rollouts must be >= 1")
        if self.max_hops < 1:
            raise ContractError("max_hops must be >= 1")
        if self.entropy_weight < 0:
            raise ContractError("entropy_weight must be >= 0")


@dataclass
class AgentState:
    entity: int
    query_vec: ag.Tensor
    hist_h: ag.Tensor
    hist_c: ag.Tensor
    step_index: int = 0


@dataclass
class ActionSet:
    source_entity: int
    edges: list
    matrix: ag.Tensor


@dataclass
class RankedAnswer:
    entity_id: int
    score: float
    source: str  # "beam" or "fallback"
    trace: list[tuple[int, int]] = field(default_factory=list)


class WalkPolicy:
    """Policy network over frozen embedding features plus per-edge embeddings."""

    def __init__(self, ps: ParameterSet, graph: KnowledgeGraph,
                 table: ComplexEmbeddingTable, query_dim: int, config: RlConfig,
                 unique_edges: bool = True):
        self.graph = graph
        self.config = config
        self.query_dim = query_dim
        self.unique_edges = unique_edges
        self.entity_feats = table.entity_features()
        self.relation_feats = table.relation_features()
        self.feature_dim = table.feature_dim
        self.edge_dim = table.feature_dim
        self.action_width = 2 * self.feature_dim + self.edge_dim
        self.unique_table = ps.add("edges/unique", (graph.n_edges, self.edge_dim),
                                   fan_in=self.edge_dim)
        self.state_proj = Linear(ps, "policy/state_proj",
                                 self.feature_dim + query_dim + config.history_dim,
                                 config.hidden_dim)
        self.action_proj = Linear(ps, "policy/action_proj", config.hidden_dim,
                                  self.action_width)
        self.start_proj = Linear(ps, "policy/start_proj",
                                 self.feature_dim + query_dim, self.action_width)
        self.history = LstmCell(ps, "policy/history", self.action_width,
                                config.history_dim)
        self._ranker: tuple[ComplexEmbeddingTable, QuestionProjection] | None = None

    def set_ranker(self, table: ComplexEmbeddingTable,
                   projection: QuestionProjection) -> None:
        """Ranker used to cap oversized action sets and to fill beam fallout."""
        self._ranker = (table, projection)

    def entity_vec(self, entity: int) -> ag.Tensor:
        return ag.constant(self.entity_feats[entity])

    def initial_state(self, topic_entity: int, query_vec: ag.Tensor) -> AgentState:
        if not 0 <= topic_entity < self.graph.n_entities:
            raise GraphLookupError(f"unknown entity id {topic_entity}")
        if query_vec.values.shape != (self.query_dim,):
            raise DimensionError(
                f"query vector shape {query_vec.values.shape} != ({self.query_dim},)")
        start = self.start_proj(ag.concat([self.entity_vec(topic_entity), query_vec]))
        zero_h, zero_c = self.history.zero_state()
        hist_h, hist_c = self.history(start, zero_h, zero_c)
        return AgentState(entity=topic_entity, query_vec=query_vec,
                          hist_h=hist_h, hist_c=hist_c)

    def action_set(self, entity: int, query_values: np.ndarray | None = None) -> ActionSet:
        """Candidate actions at an entity as (edges, stacked feature matrix).

        When the out-degree exceeds max_actions the self-loop is kept and the
        remaining slots go to the highest-ranked targets under the embedding
        ranker; without a ranker the lowest edge uids win.
        """
        edges = list(out_edges(self.graph, entity))
        cap = self.config.max_actions
        if len(edges) > cap:
            loops = [e for e in edges if e.kind == "self_loop"]
            others = [e for e in edges if e.kind != "self_loop"]
            if self._ranker is not None and query_values is not None:
                table, projection = self._ranker
                probs = answer_probabilities_all(query_values, entity, table, projection)
                others.sort(key=lambda e: (-probs[e.target_entity_id], e.edge_uid))
            kept = loops + others[:cap - len(loops)]
            edges = sorted(kept, key=lambda e: e.edge_uid)
        rel_block = ag.constant(self.relation_feats[[e.relation_id for e in edges]])
        ent_block = ag.constant(self.entity_feats[[e.target_entity_id for e in edges]])
        uids = [e.edge_uid for e in edges]
        if self.unique_edges:
            edge_block = ag.take_rows(self.unique_table, uids)
        else:
            edge_block = ag.constant(np.zeros((len(edges), self.edge_dim)))
        return ActionSet(source_entity=entity, edges=edges,
                         matrix=ag.hstack_cols([rel_block, edge_block, ent_block]))

    def distribution(self, state: AgentState, actions: ActionSet) -> ag.Tensor:
        """Softmax action probabilities; length equals the action count."""
        if not actions.edges:
            raise ContractError("action set is empty")
        return ag.softmax(self._logits(state, actions))

    def _logits(self, state: AgentState, actions: ActionSet) -> ag.Tensor:
        summary = ag.concat([self.entity_vec(state.entity), state.query_vec,
                             state.hist_h])
        hidden = ag.relu(self.state_proj(summary))
        return ag.matmul(actions.matrix, self.action_proj(hidden))

    def step(self, state: AgentState, action_index: int,
             actions: ActionSet) -> AgentState:
        """Advance to the chosen edge's target; history consumes the action row."""
        if actions.source_entity != state.entity:
            raise ContractError(
                f"action set built for entity {actions.source_entity},"
                f" not current entity {state.entity}")
        if not 0 <= action_index < len(actions.edges):
            raise ContractError(
                f"action index {action_index} outside the current action set")
        edge = actions.edges[action_index]
        row_vec = ag.row(actions.matrix, action_index)
        hist_h, hist_c = self.history(row_vec, state.hist_h, state.hist_c)
        return AgentState(entity=edge.target_entity_id, query_vec=state.query_vec,
                          hist_h=hist_h, hist_c=hist_c,
                          step_index=state.step_index + 1)


def soft_reward(final_entity: int, gold_answers: set[int], query_values: np.ndarray,
                topic_entity: int, table: ComplexEmbeddingTable,
                projection: QuestionProjection) -> float:
    """1.0 at a gold answer, otherwise the pretrained answer plausibility."""
    if final_entity in gold_answers:
        return 1.0
    return answer_probability(query_values, topic_entity, final_entity,
                              table, projection)


def binary_reward(final_entity: int, gold_answers: set[int]) -> float:
    return 1.0 if final_entity in gold_answers else 0.0


@dataclass
class Rollout:
    log_prob_sum: ag.Tensor
    entropy_sum: ag.Tensor
    final_entity: int
    actions: list[int]


def sample_rollout(policy: WalkPolicy, start: AgentState, max_hops: int,
                   rng: np.random.Generator,
                   action_cache: dict | None = None) -> Rollout:
    state = start
    log_terms: list[ag.Tensor] = []
    entropy_terms: list[ag.Tensor] = []
    actions: list[int] = []
    query_values = start.query_vec.values
    for _ in range(max_hops):
        if action_cache is not None and state.entity in action_cache:
            action_set = action_cache[state.entity]
        else:
            action_set = policy.action_set(state.entity, query_values)
            if action_cache is not None:
                action_cache[state.entity] = action_set
        logits = policy._logits(state, action_set)
        log_probs = ag.log_softmax(logits)
        probs = ag.softmax(logits)
        entropy_terms.append(ag.scale(ag.sum_all(ag.mul(probs, log_probs)), -1.0))
        p = probs.values / probs.values.sum()
        choice = int(rng.choice(len(action_set.edges), p=p))
        actions.append(choice)
        log_terms.append(ag.element(log_probs, choice))
        state = policy.step(state, choice, action_set)
    log_prob_sum = log_terms[0]
    for term in log_terms[1:]:
        log_prob_sum = ag.add(log_prob_sum, term)
    entropy_sum = entropy_terms[0]
    for term in entropy_terms[1:]:
        entropy_sum = ag.add(entropy_sum, term)
    return Rollout(log_prob_sum=log_prob_sum, entropy_sum=entropy_sum,
                   final_entity=state.entity, actions=actions)


def rollout_objective(rollouts: list[Rollout], rewards: list[float],
                      entropy_weight: float) -> ag.Tensor:
    """Mean of reward-weighted log-likelihoods plus weighted entropy (to maximise)."""
    n = len(rollouts)
    total = None
    for rollout, reward in zip(rollouts, rewards):
        term = ag.scale(rollout.log_prob_sum, reward / n)
        if entropy_weight:
            term = ag.add(term, ag.scale(rollout.entropy_sum, entropy_weight / n))
        total = term if total is None else ag.add(total, term)
    return total


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class RlTrainer:
    """REINFORCE trainer shared by the teacher and student phases.

    The teacher phase walks from gold topics under the binary reward and can
    carry an auxiliary same-topic cue head so the query embedding keeps the
    signal the selector later needs. The student phase selects topics with the
    pretrained classifier, earns the embedding-backed soft reward, and adds
    the distillation term against a frozen teacher.
    """

    def __init__(self, graph: KnowledgeGraph, encoder_ps: ParameterSet,
                 encoder: QuestionEncoder, policy_ps: ParameterSet,
                 policy: WalkPolicy, config: RlConfig, *,
                 use_human_refs: bool,
                 reward: str = "binary",
                 table: ComplexEmbeddingTable | None = None,
                 projection: QuestionProjection | None = None,
                 selector: TopicSelector | None = None,
                 selector_threshold: float = 0.5,
                 teacher: QuestionEncoder | None = None,
                 distill_weight: float = 0.0,
                 aux_cue: bool = False,
                 fact_aux: bool = False,
                 max_refs: int | None = None,
                 seed: int = 0):
        if reward not in ("binary", "soft"):
            raise ContractError(f"unknown reward mode '{reward}'")
        if reward == "soft" and (table is None or projection is None):
            raise ContractError("soft reward requires embeddings and projection")
        self.graph = graph
        self.encoder_ps = encoder_ps
        self.encoder = encoder
        self.policy_ps = policy_ps
        self.policy = policy
        self.config = config
        self.use_human_refs = use_human_refs
        self.reward_mode = reward
        self.table = table
        self.projection = projection
        self.selector = selector
        self.selector_threshold = selector_threshold
        self.teacher = teacher
        self.distill_weight = distill_weight
        self.max_refs = max_refs
        self.rng = np.random.default_rng(seed)
        self.aux_head: Linear | None = None
        if aux_cue:
            self.aux_head = Linear(encoder_ps, "encoder/aux_cue",
                                   encoder.config.query_dim, 2)
        self.fact_proj = None
        if fact_aux:
            if table is None:
                raise ContractError("fact_aux requires embedding tables")
            self.fact_proj = encoder_ps.add(
                "encoder/aux_fact/weight",
                (2 * table.dim, encoder.config.query_dim),
                fan_in=encoder.config.query_dim)
            self._fact_entity_re = ag.constant(table.entity_re)
            self._fact_entity_im = ag.constant(table.entity_im)
        self.encoder_opt = AdamState(encoder_ps, config.learning_rate,
                                     config.weight_decay)
        self.policy_opt = AdamState(policy_ps, config.learning_rate,
                                    config.weight_decay)

    def _topic_for_turn(self, conversation: Conversation, turn_index: int,
                        query_values: np.ndarray,
                        prev_gold: set[int] | None) -> int:
        if self.selector is not None and turn_index > 0:
            prev_answer = min(prev_gold) if prev_gold else None
            prob = self.selector.predict_same_topic(query_values)
            return select_topic(prob, prev_answer, conversation.main_topic_entity,
                                self.selector_threshold,
                                n_entities=self.graph.n_entities)
        turn = conversation.turns[turn_index]
        if turn.gold_topic is not None:
            return turn.gold_topic
        return conversation.main_topic_entity

    def _fact_loss(self, query_vec: ag.Tensor, topic: int,
                   gold: set[int]) -> ag.Tensor:
        """Trilinear fact-scoring BCE: gold tails against sampled corruptions.

        Half the corruptions are other neighbours of the topic, so topic
        adjacency alone cannot separate the classes; the query embedding has
        to carry the asked relation.
        """
        dim = self.table.dim
        gold_ids = sorted(gold)
        n_neg = self.config.fact_aux_negatives * len(gold_ids)
        uniform = self.rng.integers(0, self.graph.n_entities, size=n_neg)
        siblings = np.array([e.target_entity_id
                             for e in out_edges(self.graph, topic)
                             if e.target_entity_id not in gold], dtype=np.intp)
        if siblings.size:
            picks = self.rng.integers(0, siblings.size, size=n_neg)
            hard = siblings[picks]
            use_hard = self.rng.random(n_neg) < 0.5
            negatives = np.where(use_hard, hard, uniform)
        else:
            negatives = uniform
        candidates = np.concatenate([np.asarray(gold_ids, dtype=np.intp),
                                     negatives.astype(np.intp)])
        targets = np.concatenate([np.ones(len(gold_ids)), np.zeros(n_neg)])
        projected = ag.matmul(self.fact_proj, query_vec)
        q_re = ag.slice1d(projected, 0, dim)
        q_im = ag.slice1d(projected, dim, 2 * dim)
        h_re = ag.constant(self.table.entity_re[topic])
        h_im = ag.constant(self.table.entity_im[topic])
        u = ag.add(ag.mul(q_re, h_re), ag.mul(q_im, h_im))
        v = ag.sub(ag.mul(q_re, h_im), ag.mul(q_im, h_re))
        t_re = ag.constant(self.table.entity_re[candidates])
        t_im = ag.constant(self.table.entity_im[candidates])
        logits = ag.add(ag.matmul(t_re, u), ag.matmul(t_im, v))
        return ag.bce_with_logits(logits, targets)

    def _reward(self, final_entity: int, gold: set[int],
                query_values: np.ndarray, topic: int) -> float:
        if self.reward_mode == "binary":
            return binary_reward(final_entity, gold)
        return soft_reward(final_entity, gold, query_values, topic,
                           self.table, self.projection)

    def _conversation_loss(self, conversation: Conversation,
                           skip_rollouts: bool = False) -> tuple[ag.Tensor, dict]:
        config = self.config
        query_vecs = encode_conversation(self.encoder, conversation.turns,
                                         use_human_refs=self.use_human_refs,
                                         max_refs=self.max_refs)
        teacher_values: list[np.ndarray] = []
        if self.teacher is not None:
            teacher_values = [
                vec.values for vec in encode_conversation(
                    self.teacher, conversation.turns, use_human_refs=True,
                    max_refs=self.max_refs)
            ]
        labels = same_topic_labels(conversation)
        loss = None
        reward_total = 0.0
        entropy_total = 0.0
        n_turns = 0
        prev_gold: set[int] | None = None
        # One tape per conversation: cached action matrices may be shared by
        # every turn and rollout feeding this loss.
        action_cache: dict = {}
        for turn_index, turn in enumerate(conversation.turns):
            query_vec = query_vecs[turn_index]
            query_values = query_vec.values
            topic = self._topic_for_turn(conversation, turn_index,
                                         query_values, prev_gold)
            if skip_rollouts:
                turn_loss = ag.constant(0.0)
                rewards = [0.0]
                rollouts = []
            else:
                start = self.policy.initial_state(topic, query_vec)
                rollouts = [
                    sample_rollout(self.policy, start, config.max_hops, self.rng,
                                   action_cache)
                    for _ in range(config.rollouts)
                ]
                rewards = [
                    self._reward(r.final_entity, turn.gold_answers, query_values,
                                 topic)
                    for r in rollouts
                ]
                if config.advantage_baseline and len(rewards) > 1:
                    baseline = float(np.mean(rewards))
                    weights = [r - baseline for r in rewards]
                else:
                    weights = rewards
                objective = rollout_objective(rollouts, weights,
                                              config.entropy_weight)
                turn_loss = ag.scale(objective, -1.0)
            if self.aux_head is not None and labels[turn_index] is not None:
                logits = self.aux_head(query_vec)
                diff = ag.sub(ag.element(logits, 1), ag.element(logits, 0))
                aux = ag.bce_with_logits(_as_vector(diff),
                                         np.asarray([float(labels[turn_index])]))
                turn_loss = ag.add(turn_loss, ag.scale(aux, config.aux_cue_weight))
            if self.fact_proj is not None and turn.gold_answers:
                fact = self._fact_loss(query_vec, topic, turn.gold_answers)
                turn_loss = ag.add(turn_loss, ag.scale(fact, config.fact_aux_weight))
            if self.teacher is not None and self.distill_weight:
                dist = ag.squared_distance(
                    query_vec, ag.constant(teacher_values[turn_index]))
                turn_loss = ag.add(turn_loss, ag.scale(dist, self.distill_weight))
            loss = turn_loss if loss is None else ag.add(loss, turn_loss)
            reward_total += float(np.mean(rewards))
            if rollouts:
                entropy_total += float(
                    np.mean([r.entropy_sum.values for r in rollouts]))
            n_turns += 1
            prev_gold = turn.gold_answers
        metrics = {"reward": reward_total / max(n_turns, 1),
                   "entropy": entropy_total / max(n_turns, 1),
                   "loss": float(loss.values) / max(n_turns, 1)}
        return loss, metrics

    def train(self, conversations: list[Conversation],
              epochs: int | None = None) -> list[dict]:
        epochs = self.config.epochs if epochs is None else epochs
        log: list[dict] = []
        order = np.arange(len(conversations))
        for epoch in range(epochs):
            started = time.perf_counter()
            warmup = epoch < self.config.warmup_epochs
            self.rng.shuffle(order)
            epoch_reward = 0.0
            epoch_entropy = 0.0
            epoch_loss = 0.0
            for batch_start in range(0, len(order), self.config.batch_size):
                batch = order[batch_start:batch_start + self.config.batch_size]
                self.encoder_ps.zero_grad()
                self.policy_ps.zero_grad()
                for conv_index in batch:
                    conversation = conversations[conv_index]
                    try:
                        loss, metrics = self._conversation_loss(
                            conversation, skip_rollouts=warmup)
                        ag.backward(loss)
                    except NumericError as exc:
                        raise NumericError(
                            f"non-finite loss on conversation {conversation.id}: {exc}"
                        ) from exc
                    epoch_reward += metrics["reward"]
                    epoch_entropy += metrics["entropy"]
                    epoch_loss += metrics["loss"]
                scale = 1.0 / len(batch)
                clip = self.config.grad_clip_norm
                adam_step(self.encoder_ps, clip_gradients(
                    {k: g * scale for k, g in self.encoder_ps.grads().items()},
                    clip), self.encoder_opt)
                adam_step(self.policy_ps, clip_gradients(
                    {k: g * scale for k, g in self.policy_ps.grads().items()},
                    clip), self.policy_opt)
            n = len(conversations)
            log.append({
                "epoch": epoch,
                "mean_reward": epoch_reward / n,
                "entropy": epoch_entropy / n,
                "loss": epoch_loss / n,
                "wall_ms": int((time.perf_counter() - started) * 1000),
            })
        return log


def _as_vector(scalar: ag.Tensor) -> ag.Tensor:
    """Lift a scalar into a length-1 vector (for the BCE primitive)."""
    def bwd(g):
        ag._accumulate(scalar, np.asarray(g.sum()))

    return ag._node(scalar.values.reshape(1), "as_vector", (scalar,), bwd)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

@dataclass
class _BeamPath:
    entity: int
    log_prob: float
    hist_h: np.ndarray
    hist_c: np.ndarray
    trace: list[tuple[int, int]]


def beam_infer(policy: WalkPolicy, query_values: np.ndarray, topic_entity: int,
               k: int | None = None, max_hops: int | None = None,
               table: ComplexEmbeddingTable | None = None,
               projection: QuestionProjection | None = None) -> list[RankedAnswer]:
    """Deterministic beam over fixed-length walks plus embedding fallback.

    Returns every graph entity exactly once: beam-reached entities first,
    ordered by their best path probability, then all remaining entities
    ranked by the embedding scorer. Traces record (relation, entity) hops.
    """
    config = policy.config
    k = config.beam_width if k is None else k
    max_hops = config.max_hops if max_hops is None else max_hops
    query_vec = ag.constant(query_values)
    start = policy.initial_state(topic_entity, query_vec)
    paths = [_BeamPath(entity=topic_entity, log_prob=0.0,
                       hist_h=start.hist_h.values, hist_c=start.hist_c.values,
                       trace=[])]
    action_cache: dict[int, ActionSet] = {}
    for _ in range(max_hops):
        expanded: list[_BeamPath] = []
        for path in paths:
            state = AgentState(entity=path.entity, query_vec=query_vec,
                               hist_h=ag.constant(path.hist_h),
                               hist_c=ag.constant(path.hist_c))
            action_set = action_cache.get(path.entity)
            if action_set is None:
                action_set = policy.action_set(path.entity, query_values)
                action_cache[path.entity] = action_set
            probs = policy.distribution(state, action_set).values
            with np.errstate(divide="ignore"):
                log_probs = np.log(probs)
            for idx, edge in enumerate(action_set.edges):
                if not np.isfinite(log_probs[idx]):
                    continue
                new_state = policy.step(state, idx, action_set)
                expanded.append(_BeamPath(
                    entity=edge.target_entity_id,
                    log_prob=path.log_prob + float(log_probs[idx]),
                    hist_h=new_state.hist_h.values,
                    hist_c=new_state.hist_c.values,
                    trace=path.trace + [(edge.relation_id, edge.target_entity_id)],
                ))
        expanded.sort(key=lambda p: (-p.log_prob, p.trace))
        paths = expanded[:k]

    best_by_entity: dict[int, _BeamPath] = {}
    for path in paths:
        cur = best_by_entity.get(path.entity)
        if cur is None or path.log_prob > cur.log_prob:
            best_by_entity[path.entity] = path
    ranked = [
        RankedAnswer(entity_id=entity, score=float(np.exp(path.log_prob)),
                     source="beam", trace=path.trace)
        for entity, path in best_by_entity.items()
    ]
    ranked.sort(key=lambda r: (-r.score, r.entity_id))

    if table is not None and projection is not None:
        covered = set(best_by_entity)
        for entity, prob in fallback_rank(query_values, topic_entity, covered,
                                          table, projection):
            ranked.append(RankedAnswer(entity_id=entity, score=prob,
                                       source="fallback"))
    return ranked


# ---------------------------------------------------------------------------
# Gradient-check probe
# ---------------------------------------------------------------------------

def policy_loss_probe(seed: int = 0):
    """Full policy loss on a 5-node toy graph with fixed sampled actions.

    Returns (graph_fn, params) for the finite-difference harness: the loss is
    the reward-weighted log-likelihood of a frozen rollout plus the entropy
    term, exactly the training surrogate at fixed actions.
    """
    from .kg import KnowledgeGraph, augment

    graph = KnowledgeGraph(
        entity_labels=[f"n{i}" for i in range(5)],
        entity_keys=[f"n{i}" for i in range(5)],
        relation_labels=["r0", "r1"],
        triples=[(0, 0, 1, 0), (1, 0, 2, 1), (1, 1, 3, 2), (3, 0, 4, 3),
                 (2, 1, 4, 4)],
        n_base_triples=5,
    )
    graph.rebuild_indexes()
    augment(graph)
    rng = np.random.default_rng(seed)
    dim = 3
    table = ComplexEmbeddingTable(
        entity_re=rng.normal(size=(5, dim)),
        entity_im=rng.normal(size=(5, dim)),
        relation_re=rng.normal(size=(graph.n_relations, dim)),
        relation_im=rng.normal(size=(graph.n_relations, dim)),
    )
    config = RlConfig(hidden_dim=8, history_dim=6, max_hops=3,
                      entropy_weight=0.05, max_actions=200)
    ps = ParameterSet(seed=seed)
    policy = WalkPolicy(ps, graph, table, query_dim=4, config=config)
    query_values = rng.normal(size=4)
    start_entity = 0
    sample_rng = np.random.default_rng(seed + 1)
    start = policy.initial_state(start_entity, ag.constant(query_values))
    frozen = sample_rollout(policy, start, config.max_hops, sample_rng)
    reward = 0.75

    def graph_fn(params, _inputs):
        state = policy.initial_state(start_entity, ag.constant(query_values))
        log_terms = []
        entropy_terms = []
        for choice in frozen.actions:
            action_set = policy.action_set(state.entity, query_values)
            logits = policy._logits(state, action_set)
            log_probs = ag.log_softmax(logits)
            probs = ag.softmax(logits)
            entropy_terms.append(ag.scale(ag.sum_all(ag.mul(probs, log_probs)), -1.0))
            log_terms.append(ag.element(log_probs, choice))
            state = policy.step(state, choice, action_set)
        total = log_terms[0]
        for term in log_terms[1:]:
            total = ag.add(total, term)
        entropy = entropy_terms[0]
        for term in entropy_terms[1:]:
            entropy = ag.add(entropy, term)
        objective = ag.add(ag.scale(total, reward),
                           ag.scale(entropy, config.entropy_weight))
        return {"loss": ag.scale(objective, -1.0)}

    return graph_fn, ps
