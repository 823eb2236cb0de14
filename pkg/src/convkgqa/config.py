"""Pipeline configuration: one JSON document drives every stage.

Defaults follow the published full-scale settings (hidden 200, token dim 128,
batch 12, lr 2e-5, 20 epochs, 20 rollouts, weight decay 1.0); desk-scale runs
override them from a config file. The config hash stamps every artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .complex_embed import ComplexConfig, ProjectionConfig
from .data import SynthConfig
from .encoder import EncoderConfig
from .errors import ConfigurationError
from .agent import RlConfig
from .selector import SelectorConfig


@dataclass
class EvalConfig:
    split: str = "test"
    ref_mode: str = "dataset"      # dataset | template | none
    encoder_role: str = "student"
    teacher_force: bool = False
    beam_width: int | None = None  # defaults to the RL beam width
    min_p_at_1: float | None = None
    min_hit_at_5: float | None = None


@dataclass
class PipelineConfig:
    seed: int = 7
    max_refs: int = 4
    unique_edges: bool = True
    distill_weight: float = 1.0
    aux_cue_weight: float = 1.0
    synth: SynthConfig = field(default_factory=SynthConfig)
    complex: ComplexConfig = field(default_factory=ComplexConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    rl_teacher: RlConfig = field(default_factory=RlConfig)
    rl_student: RlConfig = field(default_factory=RlConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        config = cls()
        sections = {
            "synth": SynthConfig, "complex": ComplexConfig,
            "projection": ProjectionConfig, "encoder": EncoderConfig,
            "selector": SelectorConfig, "rl_teacher": RlConfig,
            "rl_student": RlConfig, "eval": EvalConfig,
        }
        for key, value in doc.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"config section '{key}' must be an object")
                current = getattr(config, key)
                for sub_key, sub_value in value.items():
                    if not hasattr(current, sub_key):
                        raise ConfigurationError(
                            f"unknown config field '{key}.{sub_key}'")
                    if sub_key == "splits":
                        sub_value = tuple(sub_value)
                    setattr(current, sub_key, sub_value)
            elif hasattr(config, key):
                setattr(config, key, value)
            else:
                raise ConfigurationError(f"unknown config field '{key}'")
        return config

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        """Read a JSON document or a flat `section.key=value` file."""
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        if text.lstrip().startswith("{"):
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
            return cls.from_dict(doc)
        return cls.from_dict(_parse_flat(text, path))


def _parse_flat(text: str, path) -> dict:
    doc: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            parsed = json.loads(value.strip())
        except json.JSONDecodeError:
            parsed = value.strip()
        target = doc
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = parsed
    return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
