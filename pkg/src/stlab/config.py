"""Experiment configuration: flat key=value files plus command-line overrides."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .fractal import LevelSetSpec


class ConfigError(ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    gamma: float = 1.5
    generator: str = "slice"
    delta: float = 2.0**-6
    a0: float = 0.5
    horizon: float = 1.0
    replicates: int = 4
    sample_size: int = 2000
    level_set: str = "interval:0.75:1.0"
    seed: int = 1
    budget: int = 20_000_000
    out: str = "stlab_out"
    law_cache: str = ""
    root_mass: float = 0.0  # 0 draws root masses from the law under N_{a0}
    profile: str = "desk"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 1.0 < self.gamma <= 2.0:
            raise ConfigError("gamma", f"must lie in (1, 2], got {self.gamma}")
        if self.generator not in ("slice", "gw", "both"):
            raise ConfigError("generator", f"must be slice, gw or both, got {self.generator!r}")
        if not 0 < self.delta <= 1:
            raise ConfigError("delta", f"must lie in (0, 1], got {self.delta}")
        if not 0 < self.delta <= self.a0:
            raise ConfigError("a0", "must be at least delta")
        if self.horizon < self.a0:
            raise ConfigError("horizon", "must be at least a0")
        k = (self.horizon - self.a0) / self.delta
        if abs(k - round(k)) > 1e-9:
            raise ConfigError("horizon", "horizon - a0 must be a multiple of delta")
        if self.replicates < 1:
            raise ConfigError("replicates", "must be positive")
        if self.sample_size < 1:
            raise ConfigError("sample_size", "must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned value")
        if self.budget < 1:
            raise ConfigError("budget", "must be positive")
        if self.root_mass < 0:
            raise ConfigError("root_mass", "must be nonnegative")
        if self.profile not in ("desk", "trim"):
            raise ConfigError("profile", "must be desk or trim")
        try:
            parse_level_set(self.level_set)
        except ValueError as exc:
            raise ConfigError("level_set", str(exc)) from None

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            lines.append(f"{f.name}={_show(v)}")
        return "\n".join(lines) + "\n"

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}

    def with_overrides(self, pairs: dict) -> "ExperimentConfig":
        return replace(self, **_coerce(pairs))


def _show(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(pairs: dict) -> dict:
    out = {}
    for key, raw in pairs.items():
        if key not in _TYPES or key == "extra":
            raise ConfigError(key, "unknown key")
        t = _TYPES[key]
        try:
            if t == "float":
                val = float(raw)
                if not math.isfinite(val):
                    raise ValueError
            elif t == "int":
                val = int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
            else:
                val = str(raw)
        except (TypeError, ValueError):
            raise ConfigError(key, f"cannot parse {raw!r} as {t}") from None
        out[key] = val
    return out


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", f"expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return (base or ExperimentConfig()).with_overrides(pairs)


def load(path, base=None) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read(), base)


def parse_level_set(text: str) -> LevelSetSpec:
    """'singleton:a', 'interval:u:v' or 'cantor:u:v[:ratio]'."""
    parts = text.split(":")
    kind = parts[0]
    try:
        nums = [float(x) for x in parts[1:]]
    except ValueError:
        raise ValueError(f"bad level-set spec {text!r}") from None
    if kind == "singleton" and len(nums) == 1:
        return LevelSetSpec("singleton", nums[0])
    if kind == "interval" and len(nums) == 2:
        return LevelSetSpec("interval", nums[0], nums[1])
    if kind == "cantor" and len(nums) in (2, 3):
        return LevelSetSpec("cantor", nums[0], nums[1], *(nums[2:]))
    raise ValueError(f"bad level-set spec {text!r}")
