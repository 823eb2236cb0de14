import math

import numpy as np
import pytest

from convkgqa import agent as am
from convkgqa.complex_embed import ComplexEmbeddingTable, QuestionProjection
from convkgqa.errors import ContractError, GraphLookupError
from convkgqa.kg import KnowledgeGraph, augment, out_edges
from convkgqa.numerics import autograd as ag
from convkgqa.numerics.gradcheck import finite_diff_check
from convkgqa.numerics.layers import ParameterSet


def _toy_graph(triples, n_entities):
    graph = KnowledgeGraph(
        entity_labels=[f"n{i}" for i in range(n_entities)],
        entity_keys=[f"n{i}" for i in range(n_entities)],
        relation_labels=sorted({f"r{r}" for _h, r, _t in triples}),
        triples=[(h, r, t, i) for i, (h, r, t) in enumerate(triples)],
        n_base_triples=len(triples),
    )
    graph.rebuild_indexes()
    augment(graph)
    return graph


def _policy_for(graph, seed=0, query_dim=4, dim=3, **config_kwargs):
    rng = np.random.default_rng(seed)
    table = ComplexEmbeddingTable(
        entity_re=rng.normal(size=(graph.n_entities, dim)),
        entity_im=rng.normal(size=(graph.n_entities, dim)),
        relation_re=rng.normal(size=(graph.n_relations, dim)),
        relation_im=rng.normal(size=(graph.n_relations, dim)),
    )
    config = am.RlConfig(hidden_dim=8, history_dim=6, max_hops=3, **config_kwargs)
    ps = ParameterSet(seed=seed)
    policy = am.WalkPolicy(ps, graph, table, query_dim=query_dim, config=config)
    return ps, policy, table


DIAMOND = [(0, 0, 1), (0, 1, 2), (1, 0, 3), (2, 0, 3), (3, 1, 4)]


def test_initial_state_zero_params_gives_zero_history():
    graph = _toy_graph(DIAMOND, 5)
    ps, policy, _table = _policy_for(graph)
    for name in ps.names():
        ps[name].values = np.zeros_like(ps[name].values)
    state = policy.initial_state(0, ag.constant(np.ones(4)))
    np.testing.assert_allclose(state.hist_h.values, np.zeros(6))


def test_initial_state_deterministic_and_validates_entity():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, _table = _policy_for(graph)
    q = ag.constant(np.linspace(0, 1, 4))
    a = policy.initial_state(2, q)
    b = policy.initial_state(2, q)
    np.testing.assert_array_equal(a.hist_h.values, b.hist_h.values)
    with pytest.raises(GraphLookupError):
        policy.initial_state(99, q)


def test_initial_state_gradcheck():
    graph = _toy_graph(DIAMOND, 5)
    ps, policy, _table = _policy_for(graph, seed=3)
    rng = np.random.default_rng(1)
    q_values = rng.normal(size=4)
    probe = ag.constant(rng.normal(size=6))

    def graph_fn(params, _inputs):
        state = policy.initial_state(1, ag.constant(q_values))
        return {"loss": ag.sum_all(ag.mul(state.hist_h, probe))}

    result = finite_diff_check(graph_fn, ps, max_coords_per_param=20)
    assert result.max_rel_error < 1e-4, result.per_parameter


def test_single_action_distribution_is_one():
    # An isolated entity only has its stop self-loop.
    graph = _toy_graph([(0, 0, 1)], 3)
    _ps, policy, _table = _policy_for(graph)
    state = policy.initial_state(2, ag.constant(np.zeros(4)))
    actions = policy.action_set(2)
    assert [e.kind for e in actions.edges] == ["self_loop"]
    probs = policy.distribution(state, actions)
    np.testing.assert_allclose(probs.values, [1.0])


def test_zero_action_projection_gives_uniform_distribution():
    graph = _toy_graph(DIAMOND, 5)
    ps, policy, _table = _policy_for(graph)
    ps["policy/action_proj/weight"].values[:] = 0.0
    ps["policy/action_proj/bias"].values[:] = 0.0
    state = policy.initial_state(0, ag.constant(np.ones(4)))
    actions = policy.action_set(0)
    probs = policy.distribution(state, actions).values
    np.testing.assert_allclose(probs, np.full(len(actions.edges),
                                              1.0 / len(actions.edges)))


def test_distribution_matches_manual_matrix_evaluation():
    graph = _toy_graph(DIAMOND, 5)
    ps, policy, _table = _policy_for(graph, seed=7)
    rng = np.random.default_rng(2)
    q = rng.normal(size=4)
    state = policy.initial_state(0, ag.constant(q))
    actions = policy.action_set(0)
    probs = policy.distribution(state, actions).values

    summary = np.concatenate([policy.entity_feats[0], q, state.hist_h.values])
    hidden = np.maximum(ps["policy/state_proj/weight"].values @ summary
                        + ps["policy/state_proj/bias"].values, 0.0)
    scored = ps["policy/action_proj/weight"].values @ hidden \
        + ps["policy/action_proj/bias"].values
    logits = actions.matrix.values @ scored
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    np.testing.assert_allclose(probs, expected, atol=1e-12)


def test_distribution_sums_to_one_for_random_params():
    graph = _toy_graph(DIAMOND, 5)
    rng = np.random.default_rng(5)
    for trial in range(20):
        _ps, policy, _table = _policy_for(graph, seed=trial)
        state = policy.initial_state(int(rng.integers(0, 5)),
                                     ag.constant(rng.normal(size=4)))
        actions = policy.action_set(state.entity)
        probs = policy.distribution(state, actions).values
        assert abs(probs.sum() - 1.0) < 1e-9
        assert np.all(probs >= 0)


def test_step_self_loop_keeps_entity_but_advances_history():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, _table = _policy_for(graph)
    state = policy.initial_state(0, ag.constant(np.ones(4)))
    actions = policy.action_set(0)
    loop_index = next(i for i, e in enumerate(actions.edges)
                      if e.kind == "self_loop")
    new_state = policy.step(state, loop_index, actions)
    assert new_state.entity == 0
    assert new_state.step_index == 1
    assert not np.array_equal(new_state.hist_h.values, state.hist_h.values)


def test_step_rejects_foreign_actions():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, _table = _policy_for(graph)
    state = policy.initial_state(0, ag.constant(np.ones(4)))
    actions = policy.action_set(0)
    with pytest.raises(ContractError):
        policy.step(state, len(actions.edges), actions)
    other = policy.action_set(3)
    with pytest.raises(ContractError):
        policy.step(state, 0, other)


def test_two_step_walk_matches_manual_unroll():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, _table = _policy_for(graph, seed=9)
    q = ag.constant(np.linspace(-1, 1, 4))
    state0 = policy.initial_state(0, q)
    actions0 = policy.action_set(0)
    state1 = policy.step(state0, 0, actions0)
    actions1 = policy.action_set(state1.entity)
    state2 = policy.step(state1, 0, actions1)

    from convkgqa.numerics.layers import lstm_step
    h, c = state0.hist_h, state0.hist_c
    h, c = lstm_step(ag.row(actions0.matrix, 0), h, c, policy.history)
    h, c = lstm_step(ag.row(actions1.matrix, 0), h, c, policy.history)
    np.testing.assert_allclose(state2.hist_h.values, h.values, atol=1e-12)


def test_soft_reward_gold_is_exactly_one():
    graph = _toy_graph(DIAMOND, 5)
    _ps, _policy, table = _policy_for(graph)
    projection = QuestionProjection(np.random.default_rng(0).normal(size=(6, 4)))
    assert am.soft_reward(3, {3, 4}, np.ones(4), 0, table, projection) == 1.0


def test_soft_reward_zero_projection_is_half():
    graph = _toy_graph(DIAMOND, 5)
    _ps, _policy, table = _policy_for(graph)
    projection = QuestionProjection(np.zeros((6, 4)))
    assert am.soft_reward(2, {3}, np.ones(4), 0, table, projection) == 0.5


def test_soft_reward_non_gold_matches_embedding_oracle():
    graph = _toy_graph(DIAMOND, 5)
    _ps, _policy, table = _policy_for(graph, seed=4)
    rng = np.random.default_rng(6)
    projection = QuestionProjection(rng.normal(size=(6, 4)))
    from convkgqa.complex_embed import answer_probability
    for _ in range(50):
        q = rng.normal(size=4)
        entity = int(rng.integers(0, 5))
        topic = int(rng.integers(0, 5))
        expected = answer_probability(q, topic, entity, table, projection)
        got = am.soft_reward(entity, {99}, q, topic, table, projection)
        assert abs(got - expected) < 1e-12


def test_entropy_of_uniform_distribution_is_log_m():
    graph = _toy_graph(DIAMOND, 5)
    ps, policy, _table = _policy_for(graph)
    ps["policy/action_proj/weight"].values[:] = 0.0
    ps["policy/action_proj/bias"].values[:] = 0.0
    start = policy.initial_state(0, ag.constant(np.ones(4)))
    rollout = am.sample_rollout(policy, start, max_hops=1,
                                rng=np.random.default_rng(0))
    m = len(policy.action_set(0).edges)
    assert float(rollout.entropy_sum.values) == pytest.approx(math.log(m))


def test_single_action_graph_has_zero_reinforce_gradient():
    # Isolated start entity: every distribution is [1.0], log pi = 0.
    graph = _toy_graph([(0, 0, 1)], 3)
    ps, policy, _table = _policy_for(graph)
    start = policy.initial_state(2, ag.constant(np.ones(4)))
    rollout = am.sample_rollout(policy, start, max_hops=3,
                                rng=np.random.default_rng(0))
    objective = am.rollout_objective([rollout], [1.0], entropy_weight=0.0)
    ps.zero_grad()
    ag.backward(ag.scale(objective, -1.0))
    for name, grad in ps.grads().items():
        np.testing.assert_allclose(grad, np.zeros_like(grad), atol=1e-12,
                                   err_msg=name)


def test_reinforce_gradient_matches_finite_differences():
    graph_fn, ps = am.policy_loss_probe(seed=0)
    result = finite_diff_check(graph_fn, ps, max_coords_per_param=16)
    assert result.max_rel_error < 1e-4, result.per_parameter


def test_sampling_is_seed_deterministic():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, _table = _policy_for(graph, seed=11)
    start = policy.initial_state(0, ag.constant(np.ones(4)))
    a = am.sample_rollout(policy, start, 3, np.random.default_rng(42))
    b = am.sample_rollout(policy, start, 3, np.random.default_rng(42))
    assert a.actions == b.actions
    assert a.final_entity == b.final_entity


def _exhaustive_paths(policy, graph, query_values, topic, max_hops):
    """Independent oracle: enumerate every fixed-length action sequence."""
    results = []

    def walk(state, log_prob, trace, depth):
        if depth == max_hops:
            results.append((state.entity, log_prob, trace))
            return
        actions = policy.action_set(state.entity, query_values)
        probs = policy.distribution(state, actions).values
        for idx, edge in enumerate(actions.edges):
            new_state = policy.step(state, idx, actions)
            walk(new_state, log_prob + math.log(probs[idx]),
                 trace + [(edge.relation_id, edge.target_entity_id)], depth + 1)

    start = policy.initial_state(topic, ag.constant(query_values))
    walk(start, 0.0, [], 0)
    return results


def test_beam_with_large_k_matches_exhaustive_enumeration():
    graph = _toy_graph([(0, 0, 1), (1, 0, 2)], 3)
    _ps, policy, table = _policy_for(graph, seed=13)
    rng = np.random.default_rng(3)
    projection = QuestionProjection(rng.normal(size=(6, 4)))
    q = rng.normal(size=4)
    max_hops = 2
    paths = _exhaustive_paths(policy, graph, q, 0, max_hops)
    assert len(paths) <= 50
    best: dict[int, float] = {}
    for entity, log_prob, _trace in paths:
        best[entity] = max(best.get(entity, -np.inf), log_prob)
    expected_order = sorted(best, key=lambda e: (-best[e], e))

    ranked = am.beam_infer(policy, q, 0, k=len(paths) + 5, max_hops=max_hops,
                           table=table, projection=projection)
    beam_part = [r for r in ranked if r.source == "beam"]
    assert [r.entity_id for r in beam_part] == expected_order
    for r in beam_part:
        assert r.score == pytest.approx(math.exp(best[r.entity_id]), rel=1e-9)


def test_beam_on_self_loop_only_graph_returns_topic_with_prob_one():
    graph = _toy_graph([(0, 0, 1)], 3)
    _ps, policy, table = _policy_for(graph, seed=1)
    projection = QuestionProjection(np.zeros((6, 4)))
    ranked = am.beam_infer(policy, np.ones(4), 2, k=5, max_hops=3,
                           table=table, projection=projection)
    assert ranked[0].entity_id == 2
    assert ranked[0].source == "beam"
    assert ranked[0].score == pytest.approx(1.0)
    assert all(rel == graph.stop_relation_id for rel, _e in ranked[0].trace)


def test_beam_and_fallback_partition_all_entities():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, table = _policy_for(graph, seed=2)
    projection = QuestionProjection(np.random.default_rng(1).normal(size=(6, 4)))
    ranked = am.beam_infer(policy, np.ones(4), 0, k=3, max_hops=2,
                           table=table, projection=projection)
    ids = [r.entity_id for r in ranked]
    assert sorted(ids) == list(range(5))
    assert len(ids) == len(set(ids))
    sources = [r.source for r in ranked]
    first_fallback = sources.index("fallback") if "fallback" in sources else len(sources)
    assert all(s == "beam" for s in sources[:first_fallback])
    assert all(s == "fallback" for s in sources[first_fallback:])


def test_beam_path_probabilities_never_increase_with_length():
    graph = _toy_graph(DIAMOND, 5)
    _ps, policy, table = _policy_for(graph, seed=8)
    q = np.random.default_rng(4).normal(size=4)
    projection = QuestionProjection(np.zeros((6, 4)))
    short = am.beam_infer(policy, q, 0, k=50, max_hops=1)
    longer = am.beam_infer(policy, q, 0, k=50, max_hops=3)
    best_short = max(r.score for r in short if r.source == "beam")
    best_long = max(r.score for r in longer if r.source == "beam")
    assert best_long <= best_short + 1e-12


def test_trainer_learns_and_logs_on_tiny_corpus(tmp_path):
    from convkgqa import data as dm
    from convkgqa.encoder import EncoderConfig, build_encoder
    from convkgqa.kg import load_triples

    config = dm.SynthConfig(n_entities=25, n_relations=3, n_conversations=16,
                            turns_per_conversation=3, two_hop_prob=0.0)
    lines = dm.synth_kg_lines(config, seed=2)
    path = tmp_path / "kg.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    graph = load_triples(path)
    augment(graph)
    train, _valid, _test = dm.synth_generate(graph, config, seed=2)
    vocab = dm.Vocabulary.build(dm.corpus_texts(train))
    for conv in train:
        for turn in conv.turns:
            turn.question = dm.tokenize(turn.question.raw_text, vocab, 24)
            turn.human_reformulations = [
                dm.tokenize(q.raw_text, vocab, 24)
                for q in turn.human_reformulations]
            turn.generated_reformulations = [
                dm.tokenize(q.raw_text, vocab, 24)
                for q in turn.generated_reformulations]

    rng = np.random.default_rng(0)
    table = ComplexEmbeddingTable(
        entity_re=rng.normal(size=(graph.n_entities, 4)),
        entity_im=rng.normal(size=(graph.n_entities, 4)),
        relation_re=rng.normal(size=(graph.n_relations, 4)),
        relation_im=rng.normal(size=(graph.n_relations, 4)))
    enc_config = EncoderConfig(token_dim=8, query_dim=12, max_len=24,
                               context_layers=1, fusion_layers=1, n_heads=2)
    enc_ps, encoder = build_encoder(3, "teacher", len(vocab), enc_config)
    rl_config = am.RlConfig(rollouts=4, max_hops=2, batch_size=4, epochs=3,
                            warmup_epochs=1, hidden_dim=12, history_dim=8,
                            learning_rate=1e-3, weight_decay=0.0)
    policy_ps = ParameterSet(seed=4)
    policy = am.WalkPolicy(policy_ps, graph, table, enc_config.query_dim,
                           rl_config)
    before = {k: v.copy() for k, v in policy_ps.state_dict().items()}
    trainer = am.RlTrainer(graph, enc_ps, encoder, policy_ps, policy, rl_config,
                           use_human_refs=True, reward="binary", table=table,
                           aux_cue=True, fact_aux=True, seed=5)
    log = trainer.train(train)
    assert len(log) == 3
    for entry in log:
        assert set(entry) == {"epoch", "mean_reward", "entropy", "loss", "wall_ms"}
        assert np.isfinite(entry["loss"])
    # Warmup epoch reports zero reward (no rollouts were sampled).
    assert log[0]["mean_reward"] == 0.0
    assert log[1]["mean_reward"] > 0.0
    after = policy_ps.state_dict()
    assert any(not np.array_equal(before[k], after[k]) for k in before)


def test_unique_edge_flag_zeroes_edge_block():
    graph = _toy_graph(DIAMOND, 5)
    rng = np.random.default_rng(3)
    table = ComplexEmbeddingTable(
        entity_re=rng.normal(size=(5, 3)), entity_im=rng.normal(size=(5, 3)),
        relation_re=rng.normal(size=(graph.n_relations, 3)),
        relation_im=rng.normal(size=(graph.n_relations, 3)),
    )
    config = am.RlConfig(hidden_dim=8, history_dim=6)
    ps_on = ParameterSet(seed=5)
    on = am.WalkPolicy(ps_on, graph, table, 4, config, unique_edges=True)
    ps_off = ParameterSet(seed=5)
    off = am.WalkPolicy(ps_off, graph, table, 4, config, unique_edges=False)
    a_on = on.action_set(0).matrix.values
    a_off = off.action_set(0).matrix.values
    d = table.feature_dim
    np.testing.assert_array_equal(a_off[:, d:d + off.edge_dim],
                                  np.zeros((a_off.shape[0], off.edge_dim)))
    assert not np.array_equal(a_on[:, d:d + on.edge_dim],
                              np.zeros((a_on.shape[0], on.edge_dim)))
    # Identical seeds: the two configurations share every other weight.
    np.testing.assert_array_equal(
        ps_on["policy/state_proj/weight"].values,
        ps_off["policy/state_proj/weight"].values)
