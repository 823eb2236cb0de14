"""Artifact layout and the loaded model bundle.

A working directory holds everything one pipeline run produces:

    kg.tsv                      world triples (synth output)
    conversations.<split>.json  corpus splits
    vocab.json                  training-split vocabulary
    kg.snapshot.json            augmented graph snapshot
    model.ckpt                  single checkpoint container, all stages
    metrics/<stage>.json        per-stage reports
    logs/<stage>.jsonl          per-epoch training logs
    reports/                    evaluation reports

Stages append their parameter groups to model.ckpt under their own path
prefixes; the bundle loader rebuilds exactly the groups that are present.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import WalkPolicy
from .complex_embed import ComplexEmbeddingTable, QuestionProjection
from .config import PipelineConfig
from .data import Vocabulary, load_conversations
from .encoder import QuestionEncoder, build_encoder
from .errors import MissingArtifactError
from .kg import KnowledgeGraph, load_snapshot
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .numerics.layers import ParameterSet
from .selector import TopicSelector, build_selector


def workdir_paths(workdir) -> dict[str, Path]:
    root = Path(workdir)
    return {
        "root": root,
        "kg": root / "kg.tsv",
        "snapshot": root / "kg.snapshot.json",
        "vocab": root / "vocab.json",
        "checkpoint": root / "model.ckpt",
        "metrics": root / "metrics",
        "logs": root / "logs",
        "reports": root / "reports",
        "corpus_train": root / "conversations.train.json",
        "corpus_valid": root / "conversations.valid.json",
        "corpus_test": root / "conversations.test.json",
    }


def require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing {path.name}: run `convkgqa {producer}` first")
    return path


def merge_into_checkpoint(path: Path, arrays: dict[str, np.ndarray],
                          rng_seed: int, config_hash: str) -> None:
    existing: dict[str, np.ndarray] = {}
    if path.exists():
        existing, _header = load_checkpoint(path)
    existing.update(arrays)
    save_checkpoint(path, existing, rng_seed=rng_seed, config_hash=config_hash)


def write_metrics(workdir, stage: str, payload: dict) -> None:
    paths = workdir_paths(workdir)
    paths["metrics"].mkdir(parents=True, exist_ok=True)
    with open(paths["metrics"] / f"{stage}.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=float)
        fh.write("\n")


def write_log(workdir, stage: str, entries: list[dict]) -> None:
    paths = workdir_paths(workdir)
    paths["logs"].mkdir(parents=True, exist_ok=True)
    with open(paths["logs"] / f"{stage}.jsonl", "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True, default=float) + "\n")


@dataclass
class ModelBundle:
    config: PipelineConfig
    graph: KnowledgeGraph
    vocab: Vocabulary
    table: ComplexEmbeddingTable | None = None
    projection: QuestionProjection | None = None
    teacher_ps: ParameterSet | None = None
    teacher: QuestionEncoder | None = None
    student_ps: ParameterSet | None = None
    student: QuestionEncoder | None = None
    selector_ps: ParameterSet | None = None
    selector: TopicSelector | None = None
    policy_ps: ParameterSet | None = None
    policy: WalkPolicy | None = None

    def encoder_for(self, role: str) -> QuestionEncoder:
        encoder = {"student": self.student, "teacher": self.teacher}.get(role)
        if encoder is None:
            raise MissingArtifactError(
                f"no trained '{role}' encoder in this bundle: run"
                f" `convkgqa train-{'student' if role == 'student' else 'teacher'}` first")
        return encoder

    def load_split(self, workdir, split: str, stats: dict | None = None):
        paths = workdir_paths(workdir)
        key = f"corpus_{split}"
        if key not in paths:
            raise MissingArtifactError(f"unknown split '{split}'")
        require(paths[key], "synth")
        return load_conversations(paths[key], self.vocab, self.graph,
                                  max_len=self.config.encoder.max_len, stats=stats)


def load_bundle(workdir, config: PipelineConfig,
                need: tuple[str, ...] = ()) -> ModelBundle:
    """Reconstruct the bundle from artifacts; `need` names required groups."""
    paths = workdir_paths(workdir)
    graph = load_snapshot(require(paths["snapshot"], "train-complex"))
    arrays, _header = load_checkpoint(require(paths["checkpoint"], "train-complex"))
    if paths["vocab"].exists():
        vocab = Vocabulary.load(paths["vocab"])
    else:
        if any(name.startswith("encoder/") for name in arrays):
            require(paths["vocab"], "train-teacher")
        vocab = Vocabulary([])
    bundle = ModelBundle(config=config, graph=graph, vocab=vocab)

    producers = {
        "complex": "train-complex",
        "projection": "train-teacher",
        "teacher": "train-teacher",
        "selector": "pretrain-selector",
        "student": "train-student",
        "policy": "train-teacher",
    }

    def group_present(prefix: str) -> bool:
        return any(name.startswith(prefix) for name in arrays)

    def build_group(group: str, builder) -> None:
        # Optional groups with config-incompatible shapes are skipped unless
        # the caller explicitly requires them.
        try:
            builder()
        except Exception:
            if group in need:
                raise

    if group_present("complex/"):
        bundle.table = ComplexEmbeddingTable.from_state_dict(arrays)
    if "projection/weight" in arrays:
        bundle.projection = QuestionProjection(arrays["projection/weight"])

    def _teacher():
        ps, encoder = build_encoder(config.seed, "teacher", len(vocab),
                                    config.encoder)
        ps.load_state_dict(arrays)
        ps.set_trainable(False)
        bundle.teacher_ps, bundle.teacher = ps, encoder

    def _student():
        ps, encoder = build_encoder(config.seed, "student", len(vocab),
                                    config.encoder)
        ps.load_state_dict(arrays)
        bundle.student_ps, bundle.student = ps, encoder

    def _selector():
        ps, selector = build_selector(config.seed, config.encoder.query_dim,
                                      config.selector)
        ps.load_state_dict(arrays)
        if "selector/input_mean" in arrays:
            selector.set_normalization(arrays["selector/input_mean"],
                                       arrays["selector/input_scale"])
        bundle.selector_ps, bundle.selector = ps, selector

    def _policy():
        from .encoder import derive_seed

        ps = ParameterSet(seed=derive_seed(config.seed, "policy"))
        policy = WalkPolicy(ps, graph, bundle.table,
                            config.encoder.query_dim, config.rl_teacher,
                            unique_edges=config.unique_edges)
        ps.load_state_dict(arrays)
        if bundle.projection is not None:
            policy.set_ranker(bundle.table, bundle.projection)
        bundle.policy_ps, bundle.policy = ps, policy

    if group_present("encoder/teacher/"):
        build_group("teacher", _teacher)
    if group_present("encoder/student/"):
        build_group("student", _student)
    if group_present("selector/"):
        build_group("selector", _selector)
    if group_present("policy/") and bundle.table is not None:
        build_group("policy", _policy)

    for group in need:
        present = {
            "complex": bundle.table is not None,
            "projection": bundle.projection is not None,
            "teacher": bundle.teacher is not None,
            "student": bundle.student is not None,
            "selector": bundle.selector is not None,
            "policy": bundle.policy is not None,
        }[group]
        if not present:
            raise MissingArtifactError(
                f"checkpoint lacks the '{group}' group: run"
                f" `convkgqa {producers[group]}` first")
    return bundle
