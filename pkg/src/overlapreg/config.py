"""Run configuration: nested frozen dataclasses with a strict JSON mapping.

`RunConfig.from_dict` rejects unknown keys anywhere in the tree, so typos in
config files fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .losses import LossConfig
from .matching import RANSAC_INLIER_THRESH, RANSAC_ITERS, SamplerMode
from .metrics import EvalThresholds
from .network import ModelConfig
from .synth import GenConfig
from .training import OptimConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class RansacConfig:
    iters: int = RANSAC_ITERS
    inlier_thresh: float = RANSAC_INLIER_THRESH

    def __post_init__(self) -> None:
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if self.inlier_thresh <= 0:
            raise ValueError("inlier_thresh must be positive")


@dataclass(frozen=True)
class DataConfig:
    gen: GenConfig = GenConfig()
    count: int = 100
    p_v_range: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.p_v_range is not None:
            lo, hi = self.p_v_range
            if not 0.0 < lo <= hi <= 1.0:
                raise ValueError("p_v_range must satisfy 0 < lo <= hi <= 1")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    optim: OptimConfig = OptimConfig()
    n_epochs: int = 30
    sampler: SamplerMode = SamplerMode(mode="prob_om", k=250, seed=0)
    ransac: RansacConfig = RansacConfig()
    eval: EvalThresholds = EvalThresholds()

    def __post_init__(self) -> None:
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)


_NESTED: dict[type, dict[str, type]] = {
    RunConfig: {
        "data": DataConfig,
        "model": ModelConfig,
        "loss": LossConfig,
        "optim": OptimConfig,
        "sampler": SamplerMode,
        "ransac": RansacConfig,
        "eval": EvalThresholds,
    },
    DataConfig: {"gen": GenConfig},
}


def _build(cls: type, d: object, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key {path}.{unknown[0]}")
    nested = _NESTED.get(cls, {})
    kwargs = {}
    for name, value in d.items():
        if name in nested:
            kwargs[name] = _build(nested[name], value, f"{path}.{name}")
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig.from_json(fh.read())
