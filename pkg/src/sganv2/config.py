"""Experiment configuration: one JSON document covering every stage.

Sections mirror the module config types (horizon, world, data, sim,
generator, discriminator, train, refine, eval). Unknown keys are rejected
so typos fail loudly; every field has a default, so {} is a valid config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Optional, Tuple

from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig
from .refine import RefineConfig
from .scenes import HorizonSpec, ValidationError
from .sim import SimConfig
from .synth import WorldConfig
from .training import TrainConfig


@dataclasses.dataclass(frozen=True)
class DataConfig:
    """What gen-data produces."""

    kind: str = "crossing"          # 'crossing' or 'forking'
    n_scenes: int = 1000
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    mode_count: int = 4             # forking only
    samples_per_mode: int = 8

    def __post_init__(self):
        if self.kind not in ("crossing", "forking"):
            raise ValidationError("data.kind must be 'crossing' or 'forking'")
        if self.n_scenes < 1:
            raise ValidationError("data.n_scenes must be >= 1")
        if len(self.split) != 3 or any(s < 0 for s in self.split):
            raise ValidationError("data.split must be three non-negative fractions")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValidationError("data.split must sum to 1")


@dataclasses.dataclass(frozen=True)
class GeneratorSection:
    hidden_dim: int = 64
    noise_dim: int = 16


@dataclasses.dataclass(frozen=True)
class DiscriminatorSection:
    n_layers: int = 4
    model_dim: int = 64
    ffn_dim: int = 64
    variant: str = "transformer"
    score_head_dims: Tuple[int, ...] = (64,)
    max_seq_len: int = 64


@dataclasses.dataclass(frozen=True)
class EvalSection:
    k: Tuple[int, ...] = (3, 20)
    collision_threshold: float = 0.1
    substeps: int = 4


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    no_interaction: bool = False
    horizon: HorizonSpec = dataclasses.field(default_factory=HorizonSpec)
    world: WorldConfig = dataclasses.field(default_factory=WorldConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    sim: SimConfig = dataclasses.field(
        default_factory=lambda: SimConfig(goal_embed_dim=16)
    )
    generator: GeneratorSection = dataclasses.field(default_factory=GeneratorSection)
    discriminator: DiscriminatorSection = dataclasses.field(
        default_factory=DiscriminatorSection
    )
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    refine: RefineConfig = dataclasses.field(default_factory=RefineConfig)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            hidden_dim=self.generator.hidden_dim,
            noise_dim=self.generator.noise_dim,
            sim=self.sim,
            horizon=self.horizon,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        d = self.discriminator
        return DiscriminatorConfig(
            n_layers=d.n_layers,
            model_dim=d.model_dim,
            ffn_dim=d.ffn_dim,
            sim=self.sim,
            variant=d.variant,
            score_head_dims=tuple(d.score_head_dims),
            max_seq_len=d.max_seq_len,
        )


_SECTIONS = {
    "horizon": HorizonSpec,
    "world": WorldConfig,
    "data": DataConfig,
    "sim": SimConfig,
    "generator": GeneratorSection,
    "discriminator": DiscriminatorSection,
    "train": TrainConfig,
    "refine": RefineConfig,
    "eval": EvalSection,
}

_TUPLE_FIELDS = {"split", "score_head_dims", "k"}


def _build_section(cls, body: dict, section: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(body) - fields
    if unknown:
        raise ValidationError(
            f"config section {section!r} has unknown keys {sorted(unknown)}"
        )
    kwargs = {
        key: tuple(value) if key in _TUPLE_FIELDS and isinstance(value, list) else value
        for key, value in body.items()
    }
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ValidationError("config document must be a JSON object")
    known = set(_SECTIONS) | {"seed", "no_interaction"}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"config has unknown sections {sorted(unknown)}")
    kwargs = {}
    if "seed" in doc:
        kwargs["seed"] = int(doc["seed"])
    if "no_interaction" in doc:
        kwargs["no_interaction"] = bool(doc["no_interaction"])
    for section, cls in _SECTIONS.items():
        if section in doc:
            kwargs[section] = _build_section(cls, doc[section], section)
    cfg = ExperimentConfig(**kwargs)
    # the root seed feeds world sampling and training unless a section pins
    # its own
    if "seed" in doc:
        if "seed" not in doc.get("world", {}):
            cfg = dataclasses.replace(
                cfg, world=dataclasses.replace(cfg.world, seed=cfg.seed)
            )
        if "seed" not in doc.get("train", {}):
            cfg = dataclasses.replace(
                cfg, train=dataclasses.replace(cfg.train, seed=cfg.seed)
            )
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as err:
            raise ValidationError(f"{path}: invalid JSON ({err.msg})") from err
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = dataclasses.asdict(cfg)

    def tuples_to_lists(value):
        if isinstance(value, tuple):
            return [tuples_to_lists(v) for v in value]
        if isinstance(value, dict):
            return {k: tuples_to_lists(v) for k, v in value.items()}
        return value

    return tuples_to_lists(doc)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the full config, for manifests and checkpoints."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def apply_overrides(
    cfg: ExperimentConfig,
    seed: Optional[int] = None,
    no_interaction: Optional[bool] = None,
    variant: Optional[str] = None,
    objective: Optional[str] = None,
) -> ExperimentConfig:
    """Return a config with CLI-level overrides applied."""
    out = cfg
    if seed is not None:
        out = dataclasses.replace(
            out, seed=seed, train=dataclasses.replace(out.train, seed=seed),
            world=dataclasses.replace(out.world, seed=seed),
        )
    if no_interaction is not None:
        out = dataclasses.replace(out, no_interaction=no_interaction)
    if variant is not None:
        out = dataclasses.replace(
            out, discriminator=dataclasses.replace(out.discriminator, variant=variant)
        )
    if objective is not None:
        out = dataclasses.replace(
            out, train=dataclasses.replace(out.train, objective=objective)
        )
    return out
