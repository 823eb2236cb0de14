"""Pipeline stages: synth, embedding training, teacher, selector, student,
evaluation, ablations, gradient checks.

Every stage reads and writes only the declared artifacts in the working
directory and is bitwise-reproducible from (config, seed) in single-threaded
mode. Stage order: synth -> train-complex -> train-teacher ->
pretrain-selector -> train-student -> evaluate.
"""

from __future__ import annotations

import copy
import json
import time
from pathlib import Path

import numpy as np

from . import data as dm
from .agent import RlTrainer, WalkPolicy, policy_loss_probe
from .bundle import (
    ModelBundle,
    load_bundle,
    merge_into_checkpoint,
    require,
    workdir_paths,
    write_log,
    write_metrics,
)
from .complex_embed import pretrain_projection, train_complex
from .config import PipelineConfig
from .encoder import build_encoder, derive_seed, encode_conversation
from .errors import ConfigurationError
from .evaluate import (
    EvalReport,
    ablation_table,
    evaluate,
    normalize_variant,
)
from .kg import augment, load_triples, save_snapshot
from .numerics.gradcheck import finite_diff_check
from .numerics.layers import LstmCell, ParameterSet, TransformerLayer
from .numerics import autograd as ag
from .selector import pretrain_selector


def run_synth(config: PipelineConfig, workdir) -> dict:
    """Write the synthetic world and conversation splits."""
    paths = workdir_paths(workdir)
    paths["root"].mkdir(parents=True, exist_ok=True)
    lines = dm.synth_kg_lines(config.synth, seed=config.seed)
    with open(paths["kg"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    graph = load_triples(paths["kg"])
    augment(graph)
    train, valid, test = dm.synth_generate(graph, config.synth, seed=config.seed)
    dm.save_conversations(train, paths["corpus_train"])
    dm.save_conversations(valid, paths["corpus_valid"])
    dm.save_conversations(test, paths["corpus_test"])
    summary = {
        "entities": graph.n_entities,
        "relations_base": (graph.n_relations - 1) // 2,
        "triples_augmented": graph.n_edges,
        "conversations": {"train": len(train), "valid": len(valid),
                          "test": len(test)},
    }
    write_metrics(workdir, "synth", summary)
    return summary


def run_train_complex(config: PipelineConfig, workdir) -> dict:
    paths = workdir_paths(workdir)
    graph = load_triples(require(paths["kg"], "synth"))
    augment(graph)
    started = time.perf_counter()
    table, record, _holdout = train_complex(graph, _with_seed(config.complex,
                                                              config.seed))
    save_snapshot(graph, paths["snapshot"], rng_seed=config.seed,
                  config_hash=config.config_hash())
    merge_into_checkpoint(paths["checkpoint"], table.state_dict(),
                          rng_seed=config.seed, config_hash=config.config_hash())
    summary = {
        "epochs": len(record.epoch_losses),
        "final_loss": record.epoch_losses[-1] if record.epoch_losses else None,
        "fraction_decreasing": record.fraction_decreasing(tolerance=1e-3),
        "wall_s": time.perf_counter() - started,
    }
    write_metrics(workdir, "train-complex", summary)
    write_log(workdir, "train-complex",
              [{"epoch": i, "loss": loss} for i, loss in enumerate(record.epoch_losses)])
    return summary


def _with_seed(section, seed: int):
    clone = copy.deepcopy(section)
    clone.seed = seed
    return clone


def _load_world(config: PipelineConfig, workdir):
    paths = workdir_paths(workdir)
    from .kg import load_snapshot

    graph = load_snapshot(require(paths["snapshot"], "train-complex"))
    raw_train = dm.read_corpus_file(require(paths["corpus_train"], "synth"))
    if paths["vocab"].exists():
        vocab = dm.Vocabulary.load(paths["vocab"])
    else:
        texts = []
        for conv in raw_train:
            for turn in conv["turns"]:
                texts.append(turn["question"])
                texts.extend(turn["human_reformulations"])
                texts.extend(turn["generated_reformulations"])
        vocab = dm.Vocabulary.build(texts)
        vocab.save(paths["vocab"], rng_seed=config.seed,
                   config_hash=config.config_hash())
    splits = {}
    for split in ("train", "valid", "test"):
        splits[split] = dm.load_conversations(
            paths[f"corpus_{split}"], vocab, graph,
            max_len=config.encoder.max_len)
    return graph, vocab, splits


def run_train_teacher(config: PipelineConfig, workdir) -> dict:
    """RL-train the teacher encoder and policy, then fit the soft-reward
    projection on the frozen teacher."""
    graph, vocab, splits = _load_world(config, workdir)
    paths = workdir_paths(workdir)
    bundle = load_bundle(workdir, config, need=("complex",))
    started = time.perf_counter()

    teacher_ps, teacher = build_encoder(config.seed, "teacher", len(vocab),
                                        config.encoder)
    rl_cfg = _with_seed(config.rl_teacher, config.seed)
    policy_ps = ParameterSet(seed=derive_seed(config.seed, "policy"))
    policy = WalkPolicy(policy_ps, graph, bundle.table, config.encoder.query_dim,
                        rl_cfg, unique_edges=config.unique_edges)
    trainer = RlTrainer(graph, teacher_ps, teacher, policy_ps, policy, rl_cfg,
                        use_human_refs=True, reward="binary",
                        table=bundle.table,
                        aux_cue=config.aux_cue_weight > 0,
                        fact_aux=rl_cfg.fact_aux_weight > 0,
                        max_refs=config.max_refs,
                        seed=derive_seed(config.seed, "teacher-rl"))
    log = trainer.train(splits["train"])

    # Projection fit: teacher is frozen from here on.
    teacher_ps.set_trainable(False)
    facts_q, facts_topic, facts_answer = [], [], []
    for conversation in splits["train"]:
        vecs = encode_conversation(teacher, conversation.turns,
                                   use_human_refs=True, max_refs=config.max_refs)
        for turn, vec in zip(conversation.turns, vecs):
            topic = turn.gold_topic if turn.gold_topic is not None \
                else conversation.main_topic_entity
            for answer in sorted(turn.gold_answers):
                facts_q.append(vec.values)
                facts_topic.append(topic)
                facts_answer.append(answer)
    projection, proj_record = pretrain_projection(
        np.array(facts_q), np.array(facts_topic), np.array(facts_answer),
        bundle.table, _with_seed(config.projection, config.seed), graph=graph)

    arrays = dict(teacher_ps.state_dict())
    arrays.update(policy_ps.state_dict())
    arrays["projection/weight"] = projection.weight
    merge_into_checkpoint(paths["checkpoint"], arrays, rng_seed=config.seed,
                          config_hash=config.config_hash())
    summary = {
        "epochs": len(log),
        "final_mean_reward": log[-1]["mean_reward"] if log else None,
        "projection_final_loss": proj_record.epoch_losses[-1],
        "wall_s": time.perf_counter() - started,
    }
    write_metrics(workdir, "train-teacher", summary)
    write_log(workdir, "train-teacher", log)
    return summary


def run_pretrain_selector(config: PipelineConfig, workdir,
                          use_human_refs: bool = True,
                          max_refs: int | None = None) -> dict:
    config_hash = config.config_hash()
    _graph, _vocab, splits = _load_world(config, workdir)
    paths = workdir_paths(workdir)
    bundle = load_bundle(workdir, config, need=("complex", "teacher"))
    started = time.perf_counter()
    selector_ps, selector, report = pretrain_selector(
        splits["train"], splits["valid"], bundle.teacher, config.seed,
        config.selector,
        max_refs=config.max_refs if max_refs is None else max_refs,
        use_human_refs=use_human_refs)
    arrays = dict(selector_ps.state_dict())
    arrays["selector/input_mean"] = selector.input_mean
    arrays["selector/input_scale"] = selector.input_scale
    merge_into_checkpoint(paths["checkpoint"], arrays, rng_seed=config.seed,
                          config_hash=config_hash)
    summary = {
        "valid_accuracy": report["valid_accuracy"],
        "majority_baseline": report["majority_baseline"],
        "n_train": report["n_train"],
        "n_valid": report["n_valid"],
        "reference_full_scale_accuracy": 0.832,
        "wall_s": time.perf_counter() - started,
    }
    write_metrics(workdir, "pretrain-selector", summary)
    return summary


def _distill_distance(student, teacher, conversations, max_refs) -> dict:
    """Held-out mean teacher-student distances (squared objective and norm)."""
    squared_total = 0.0
    norm_total = 0.0
    n = 0
    for conversation in conversations:
        teacher_out = encode_conversation(teacher, conversation.turns,
                                          use_human_refs=True, max_refs=max_refs)
        student_out = encode_conversation(student, conversation.turns,
                                          use_human_refs=False, max_refs=max_refs)
        for t_vec, s_vec in zip(teacher_out, student_out):
            diff = t_vec.values - s_vec.values
            squared = float(np.dot(diff, diff))
            squared_total += squared
            norm_total += float(np.sqrt(squared))
            n += 1
    return {"mean_squared_distance": squared_total / max(n, 1),
            "mean_distance": norm_total / max(n, 1), "turns": n}


def run_train_student(config: PipelineConfig, workdir) -> dict:
    """Distill the student onto the frozen teacher while continuing policy
    training with the soft reward and selector-chosen topics."""
    graph, vocab, splits = _load_world(config, workdir)
    paths = workdir_paths(workdir)
    bundle = load_bundle(workdir, config,
                         need=("complex", "teacher", "selector", "policy",
                               "projection"))
    started = time.perf_counter()

    student_ps, student = build_encoder(config.seed, "student", len(vocab),
                                        config.encoder)
    bundle.teacher_ps.set_trainable(False)

    # Held-out distance at initialisation, for the distillation gate.
    valid_split = splits["valid"] if splits["valid"] else splits["train"]
    before = _distill_distance(student, bundle.teacher, valid_split,
                               config.max_refs)

    rl_cfg = _with_seed(config.rl_student, config.seed)
    trainer = RlTrainer(graph, student_ps, student, bundle.policy_ps,
                        bundle.policy, rl_cfg,
                        use_human_refs=False, reward="soft",
                        table=bundle.table, projection=bundle.projection,
                        selector=bundle.selector,
                        selector_threshold=config.selector.threshold,
                        teacher=bundle.teacher,
                        distill_weight=config.distill_weight,
                        aux_cue=config.aux_cue_weight > 0,
                        fact_aux=rl_cfg.fact_aux_weight > 0,
                        max_refs=config.max_refs,
                        seed=derive_seed(config.seed, "student-rl"))
    log = trainer.train(splits["train"])
    after = _distill_distance(student, bundle.teacher, valid_split,
                              config.max_refs)

    arrays = dict(student_ps.state_dict())
    arrays.update(bundle.policy_ps.state_dict())
    merge_into_checkpoint(paths["checkpoint"], arrays, rng_seed=config.seed,
                          config_hash=config.config_hash())
    reduction = 1.0 - (after["mean_squared_distance"]
                       / max(before["mean_squared_distance"], 1e-12))
    summary = {
        "epochs": len(log),
        "final_mean_reward": log[-1]["mean_reward"] if log else None,
        "distill_before": before,
        "distill_after": after,
        "distill_reduction": reduction,
        "wall_s": time.perf_counter() - started,
    }
    write_metrics(workdir, "train-student", summary)
    write_log(workdir, "train-student", log)
    return summary


def run_evaluate(config: PipelineConfig, workdir, *, split: str | None = None,
                 encoder_role: str | None = None, ref_mode: str | None = None,
                 teacher_force: bool | None = None) -> tuple[EvalReport, int]:
    """Evaluate a split; the exit code reflects the configured thresholds."""
    _graph, _vocab, splits = _load_world(config, workdir)
    need = ("complex", "teacher", "selector", "policy", "projection")
    role = encoder_role or config.eval.encoder_role
    if role == "student":
        need = need + ("student",)
    bundle = load_bundle(workdir, config, need=need)
    split = split or config.eval.split
    if split not in splits:
        raise ConfigurationError(f"unknown split '{split}'")
    report = evaluate(
        bundle, splits[split],
        encoder_role=role,
        ref_mode=ref_mode if ref_mode is not None else config.eval.ref_mode,
        teacher_force=(teacher_force if teacher_force is not None
                       else config.eval.teacher_force),
        beam_width=config.eval.beam_width,
        max_refs=config.max_refs)
    paths = workdir_paths(workdir)
    paths["reports"].mkdir(parents=True, exist_ok=True)
    out = paths["reports"] / f"eval.{split}.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1, default=float)
        fh.write("\n")
    exit_code = 0
    if config.eval.min_p_at_1 is not None \
            and report.overall["p_at_1"] < config.eval.min_p_at_1:
        exit_code = 1
    if config.eval.min_hit_at_5 is not None \
            and report.overall["hit_at_5"] < config.eval.min_hit_at_5:
        exit_code = 1
    return report, exit_code


def run_full_pipeline(config: PipelineConfig, workdir) -> dict:
    """synth through train-student, returning per-stage summaries."""
    return {
        "synth": run_synth(config, workdir),
        "train-complex": run_train_complex(config, workdir),
        "train-teacher": run_train_teacher(config, workdir),
        "pretrain-selector": run_pretrain_selector(config, workdir),
        "train-student": run_train_student(config, workdir),
    }


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

def _variant_config(config: PipelineConfig, variant: str) -> PipelineConfig:
    clone = PipelineConfig.from_dict(config.to_dict())
    if variant == "unique_edge_off":
        clone.unique_edges = False
    return clone


def run_ablation_variant(config: PipelineConfig, workdir, variant: str) -> dict:
    """Train and evaluate one ablation variant in its own subdirectory."""
    variant = normalize_variant(variant)
    vconfig = _variant_config(config, variant)
    vdir = Path(workdir) / "ablation" / variant
    vdir.mkdir(parents=True, exist_ok=True)

    run_synth(vconfig, vdir)
    run_train_complex(vconfig, vdir)

    if variant in ("teacher_student", "unique_edge_on", "unique_edge_off"):
        run_train_teacher(vconfig, vdir)
        run_pretrain_selector(vconfig, vdir)
        run_train_student(vconfig, vdir)
        report, _ = run_evaluate(vconfig, vdir, split="test",
                                 encoder_role="student", ref_mode="dataset")
    elif variant == "train_test_mismatch":
        run_train_teacher(vconfig, vdir)
        run_pretrain_selector(vconfig, vdir)
        # Teacher was trained on human reformulations; test feeds generated.
        report, _ = run_evaluate(vconfig, vdir, split="test",
                                 encoder_role="teacher", ref_mode="dataset")
    elif variant == "generated_only":
        _train_single_encoder(vconfig, vdir, ref_mode="generated")
        report, _ = run_evaluate(vconfig, vdir, split="test",
                                 encoder_role="teacher", ref_mode="dataset")
    elif variant == "no_reformulation":
        _train_single_encoder(vconfig, vdir, ref_mode="none")
        report, _ = run_evaluate(vconfig, vdir, split="test",
                                 encoder_role="teacher", ref_mode="none")
    else:  # pragma: no cover - normalize_variant guards this
        raise ConfigurationError(variant)
    return report.overall


def _train_single_encoder(config: PipelineConfig, workdir, ref_mode: str) -> None:
    """Ablation path without the teacher-student split: one encoder, RL only."""
    graph, vocab, splits = _load_world(config, workdir)
    paths = workdir_paths(workdir)
    bundle = load_bundle(workdir, config, need=("complex",))

    encoder_ps, encoder = build_encoder(config.seed, "teacher", len(vocab),
                                        config.encoder)
    rl_cfg = _with_seed(config.rl_teacher, config.seed)
    policy_ps = ParameterSet(seed=derive_seed(config.seed, "policy"))
    policy = WalkPolicy(policy_ps, graph, bundle.table, config.encoder.query_dim,
                        rl_cfg, unique_edges=config.unique_edges)
    max_refs = 0 if ref_mode == "none" else config.max_refs
    trainer = RlTrainer(graph, encoder_ps, encoder, policy_ps, policy, rl_cfg,
                        use_human_refs=False, reward="binary",
                        table=bundle.table,
                        aux_cue=config.aux_cue_weight > 0,
                        fact_aux=rl_cfg.fact_aux_weight > 0, max_refs=max_refs,
                        seed=derive_seed(config.seed, "teacher-rl"))
    trainer.train(splits["train"])

    encoder_ps.set_trainable(False)
    facts_q, facts_topic, facts_answer = [], [], []
    for conversation in splits["train"]:
        vecs = encode_conversation(encoder, conversation.turns,
                                   use_human_refs=False, max_refs=max_refs)
        for turn, vec in zip(conversation.turns, vecs):
            topic = turn.gold_topic if turn.gold_topic is not None \
                else conversation.main_topic_entity
            for answer in sorted(turn.gold_answers):
                facts_q.append(vec.values)
                facts_topic.append(topic)
                facts_answer.append(answer)
    projection, _record = pretrain_projection(
        np.array(facts_q), np.array(facts_topic), np.array(facts_answer),
        bundle.table, _with_seed(config.projection, config.seed), graph=graph)

    arrays = dict(encoder_ps.state_dict())
    arrays.update(policy_ps.state_dict())
    arrays["projection/weight"] = projection.weight
    merge_into_checkpoint(paths["checkpoint"], arrays, rng_seed=config.seed,
                          config_hash=config.config_hash())
    run_pretrain_selector(config, workdir, use_human_refs=False,
                          max_refs=max_refs)


def run_ablate(config: PipelineConfig, workdir, variants) -> dict:
    """One row per variant, identical seed and splits throughout."""
    rows: dict[str, dict[str, float]] = {}
    for variant in variants:
        rows[normalize_variant(variant)] = run_ablation_variant(
            config, workdir, variant)
    payload = {
        "rows": rows,
        "seed": config.seed,
        "reference": {
            "unique_edge": {"p_at_1_without": 0.227, "p_at_1_with": 0.265,
                            "published_average_gain": 0.022},
            "teacher_student": {"generated_only_p_at_1": 0.212,
                                "teacher_student_p_at_1": 0.265},
            "note": ("published full-scale deltas recorded for directional"
                     " comparison only"),
        },
    }
    if "unique_edge_on" in rows and "unique_edge_off" in rows:
        payload["unique_edge_direction_agrees"] = bool(
            rows["unique_edge_on"]["p_at_1"] >= rows["unique_edge_off"]["p_at_1"])
    if "teacher_student" in rows and "generated_only" in rows:
        payload["teacher_student_direction_agrees"] = bool(
            rows["teacher_student"]["p_at_1"] >= rows["generated_only"]["p_at_1"])
    paths = workdir_paths(workdir)
    paths["reports"].mkdir(parents=True, exist_ok=True)
    with open(paths["reports"] / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=float)
        fh.write("\n")
    with open(paths["reports"] / "ablation.txt", "w", encoding="utf-8") as fh:
        fh.write(ablation_table(rows) + "\n")
    return payload


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def run_gradcheck(tolerance: float = 1e-4, seed: int = 0) -> dict:
    """Finite-difference verification of every layer and the policy loss."""
    started = time.perf_counter()
    results: dict[str, float] = {}
    rng = np.random.default_rng(seed)

    ps = ParameterSet(seed=seed)
    lstm = LstmCell(ps, "lstm", n_in=5, n_hidden=4)
    probe = ag.constant(rng.normal(size=4))
    x, h0, c0 = rng.normal(size=5), rng.normal(size=4), rng.normal(size=4)

    def lstm_graph(params, _inputs):
        h, c = lstm(ag.constant(x), ag.constant(h0), ag.constant(c0))
        return {"loss": ag.sum_all(ag.mul(ag.add(h, c), probe))}

    results["lstm"] = finite_diff_check(lstm_graph, ps,
                                        tolerance=tolerance).max_rel_error

    ps2 = ParameterSet(seed=seed + 1)
    layer = TransformerLayer(ps2, "encoder", dim=6, n_heads=2, ffn_dim=8)
    seq = rng.normal(size=(3, 6))
    probe2 = ag.constant(rng.normal(size=(3, 6)))

    def transformer_graph(params, _inputs):
        return {"loss": ag.sum_all(ag.mul(layer(ag.constant(seq)), probe2))}

    results["transformer"] = finite_diff_check(
        transformer_graph, ps2, tolerance=tolerance,
        max_coords_per_param=24).max_rel_error

    graph_fn, policy_ps = policy_loss_probe(seed=seed)
    results["policy_loss"] = finite_diff_check(
        graph_fn, policy_ps, tolerance=tolerance,
        max_coords_per_param=24).max_rel_error

    worst = max(results.values())
    return {
        "per_check": results,
        "max_rel_error": worst,
        "tolerance": tolerance,
        "passed": worst < tolerance,
        "wall_s": time.perf_counter() - started,
    }
