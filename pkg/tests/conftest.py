import numpy as np
import pytest

from convkgqa import pipeline as pl
from convkgqa.bundle import merge_into_checkpoint, workdir_paths
from convkgqa.config import PipelineConfig
from convkgqa.encoder import build_encoder, derive_seed
from convkgqa.agent import WalkPolicy
from convkgqa.numerics.layers import ParameterSet
from convkgqa.selector import build_selector

TINY_CONFIG = {
    "seed": 5,
    "max_refs": 2,
    "synth": {"n_entities": 30, "n_relations": 3, "n_conversations": 16,
              "turns_per_conversation": 3, "two_hop_prob": 0.1,
              "topic_shift_prob": 0.3},
    "complex": {"dim": 6, "epochs": 4, "batch_size": 64, "learning_rate": 0.02,
                "negatives_per_positive": 4},
    "projection": {"epochs": 5, "learning_rate": 0.02},
    "encoder": {"token_dim": 8, "query_dim": 12, "max_len": 24,
                "context_layers": 1, "fusion_layers": 1, "n_heads": 2},
    "selector": {"hidden_dim": 8, "epochs": 3, "learning_rate": 1e-2},
    "rl_teacher": {"rollouts": 3, "max_hops": 2, "batch_size": 4, "epochs": 1,
                   "hidden_dim": 12, "history_dim": 8, "weight_decay": 0.0,
                   "beam_width": 6, "learning_rate": 1e-3},
    "rl_student": {"rollouts": 3, "max_hops": 2, "batch_size": 4, "epochs": 1,
                   "hidden_dim": 12, "history_dim": 8, "weight_decay": 0.0,
                   "beam_width": 6, "learning_rate": 1e-3},
}


def make_tiny_config() -> PipelineConfig:
    return PipelineConfig.from_dict(TINY_CONFIG)


def build_tiny_workdir(root) -> tuple[PipelineConfig, object]:
    """Synth + embeddings for real; encoder/selector/policy at random init.

    Fast enough for unit tests while structurally identical to a trained
    bundle: every checkpoint group and sidecar artifact is present.
    """
    config = make_tiny_config()
    pl.run_synth(config, root)
    pl.run_train_complex(config, root)
    graph, vocab, _splits = pl._load_world(config, root)

    teacher_ps, _teacher = build_encoder(config.seed, "teacher", len(vocab),
                                         config.encoder)
    student_ps, _student = build_encoder(config.seed, "student", len(vocab),
                                         config.encoder)
    selector_ps, selector = build_selector(config.seed, config.encoder.query_dim,
                                           config.selector)
    from convkgqa.bundle import load_bundle

    bundle = load_bundle(root, config, need=("complex",))
    policy_ps = ParameterSet(seed=derive_seed(config.seed, "policy"))
    WalkPolicy(policy_ps, graph, bundle.table, config.encoder.query_dim,
               config.rl_teacher, unique_edges=config.unique_edges)
    rng = np.random.default_rng(derive_seed(config.seed, "projection"))
    projection_weight = rng.normal(
        scale=0.3, size=(2 * bundle.table.dim, config.encoder.query_dim))

    arrays = {}
    arrays.update(teacher_ps.state_dict())
    arrays.update(student_ps.state_dict())
    arrays.update(selector_ps.state_dict())
    arrays.update(policy_ps.state_dict())
    arrays["selector/input_mean"] = selector.input_mean
    arrays["selector/input_scale"] = selector.input_scale
    arrays["projection/weight"] = projection_weight
    paths = workdir_paths(root)
    merge_into_checkpoint(paths["checkpoint"], arrays, rng_seed=config.seed,
                          config_hash=config.config_hash())
    return config, root


@pytest.fixture(scope="session")
def tiny_workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-bundle")
    config, _ = build_tiny_workdir(root)
    return config, root
