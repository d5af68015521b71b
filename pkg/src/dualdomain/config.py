"""Flat `key = value` experiment configs with `#` comments.

Every run is fully reproducible from its config plus the engine version:
all randomness derives from the single master `seed` through fixed,
documented stream tags.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synthesis import DDSConfig, LossWeights


class ConfigError(ValueError):
    """Invalid config contents; the message names the offending key."""


_SEED_TAGS = {
    "z_star": 11,
    "init": 22,
    "batch_z_star": 33,
    "batch_init": 44,
    "refs_source": 55,
    "refs_target": 66,
}


def derive_seed(master: int, tag: str, index: int = 0) -> int:
    """Deterministic child seed for a named random stream."""
    sequence = np.random.SeedSequence([int(master), _SEED_TAGS[tag], int(index)])
    return int(sequence.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    # generators
    generator: str = "analytic"  # analytic | neural
    image_size: int = 32
    neural_seed: int = 7
    neural_scale: float = 0.1
    # randomness
    seed: int = 0
    # masks
    mask_source: str = "analytic"  # analytic | threshold | png
    mask_part: str = "union"  # 0 | 1 | union
    mask_channel: int = 0
    mask_tau: float = 0.0
    mask_png_source: str = ""
    mask_png_target: str = ""
    # objective and optimisation
    alpha: float = 0.9
    beta: float = 1.0
    gamma: float = 0.5
    lr: float = 0.01
    iterations: int = 1000
    backbone: str = "default"
    feature_source: str = "backbone"  # backbone | generator
    init_mode: str = "random"  # random | from_z_star
    crossover_norm: str = "mse"  # mse | euclidean
    snapshot_iters: tuple[int, ...] = ()
    fid_probe_every: int = 0  # 0 disables probes
    # output
    out: str = "runs/out"
    # sweep
    alpha_grid: tuple[float, ...] = ()
    beta_grid: tuple[float, ...] = ()
    gamma_grid: tuple[float, ...] = ()
    # fid curve
    batch_size: int = 10
    ref_count: int = 64
    probe_every: int = 100
    # unpaired
    seed_source: int = 0
    seed_target: int = 1
    # concurrency
    jobs: int = 1

    def __post_init__(self):
        if self.generator not in ("analytic", "neural"):
            raise ConfigError(f"generator: unknown value {self.generator!r}")
        if self.mask_source not in ("analytic", "threshold", "png"):
            raise ConfigError(f"mask_source: unknown value {self.mask_source!r}")
        if self.mask_part not in ("0", "1", "union"):
            raise ConfigError(f"mask_part: unknown value {self.mask_part!r}")
        if self.iterations < 0:
            raise ConfigError("iterations: must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr: must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs: must be >= 1")

    def part_selector(self):
        return "union" if self.mask_part == "union" else int(self.mask_part)

    def dds_config(self, init_seed: int) -> DDSConfig:
        return DDSConfig(
            weights=LossWeights(self.alpha, self.beta, self.gamma),
            lr=self.lr,
            max_iterations=self.iterations,
            backbone=self.backbone,
            feature_source=self.feature_source,
            init_mode=self.init_mode,
            snapshot_iterations=tuple(self.snapshot_iters),
            fid_probe_every=self.fid_probe_every or None,
            crossover_norm=self.crossover_norm,
            seed=init_seed,
        )

    def to_dict(self) -> dict:
        raw = dataclasses.asdict(self)
        for key, value in raw.items():
            if isinstance(value, tuple):
                raw[key] = list(value)
        return raw

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        return cls(**kwargs)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    declared = _FIELD_TYPES[key]
    try:
        if declared == "int":
            return int(raw)
        if declared == "float":
            return float(raw)
        if declared == "str":
            return raw
        if declared.startswith("tuple[int"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if declared.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({err})") from None
    raise ConfigError(f"{key}: unsupported field type {declared!r}")


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; `#` starts a comment; blank lines ignored."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return ExperimentConfig(**values)
