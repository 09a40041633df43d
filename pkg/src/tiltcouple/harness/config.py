"""Experiment configuration: a flat `key = value` text file with typed values.

Lines starting with `#` are comments. Lists are comma separated. Unknown keys
and values that fail to parse raise `ConfigError`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

from ..lattice import Shape


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ConstraintWarning(UserWarning):
    """A parameter sits outside the asymptotic regime but the run is still well defined."""


T_RULES = ("power", "exponential")


@dataclass(frozen=True)
class ExperimentConfig:
    # domain
    shape: str = "ball"
    d: int = 3
    radius: float = 1.0
    x0: tuple[float, ...] = (0.0, 0.0, 0.0)
    # geometry of B, B^eps and Delta
    alpha: float = 0.2
    eps: float = 0.4
    gamma: float = 0.35
    escape_multiplier: float = 3.0
    # coupling time scales: t_N = ceil(t_factor N^(2 + delta)), eps_N^2 = N^(2 + delta') / t_N
    delta: float = 0.5
    delta_prime: float = 0.25
    t_rule: str = "power"
    t_factor: float = 2.0
    beta: float = 0.5
    window_margin: float = 0.5
    walk_fraction: float = 0.25
    ri_fraction: float = 1.0 / 3.0
    N_list: tuple[int, ...] = (8, 12, 16)
    spectrum_N_list: tuple[int, ...] = (8, 16, 24, 32)
    ruin_N_list: tuple[int, ...] = (16, 24, 32)
    check_N: int = 12
    small_N: int = 8
    coupling_floor: float = 0.9
    # Monte Carlo sizes
    trials: int = 100
    samples: int = 10_000
    excursion_samples: int = 2000
    bracket_samples: int = 20_000
    mixing_trials: int = 1000
    budget: int = 1000
    chain_steps: int = 100_000
    # numerics
    seed: int = 42
    tol: float = 1e-12
    mu_floor: float = 0.0
    k_max: int = 20
    bound_C: float = 1.0
    bound_c: float = 1.0
    cache_dir: str = ""

    def __post_init__(self):
        problems = []
        if not 0 < self.delta_prime < self.delta < 1:
            problems.append("need 0 < delta_prime < delta < 1")
        if self.beta <= 0:
            problems.append("beta must be positive")
        if self.t_rule not in T_RULES:
            problems.append(f"t_rule must be one of {T_RULES}")
        elif self.t_rule == "exponential":
            problems.append("exponentially growing t_N is not supported")
        if self.t_factor <= 0:
            problems.append("t_factor must be positive")
        if not 0 <= self.window_margin <= 1:
            problems.append("window_margin must lie in [0, 1]")
        if not (0 < self.walk_fraction <= 1 and 0 < self.ri_fraction <= 1):
            problems.append("window fractions must lie in (0, 1]")
        if min(self.trials, self.samples, self.mixing_trials, self.excursion_samples,
               self.bracket_samples) < 1:
            problems.append("trial and sample counts must be positive")
        if self.budget < 1 or self.chain_steps < 1 or self.k_max < 1:
            problems.append("budgets must be positive")
        for key in ("N_list", "spectrum_N_list", "ruin_N_list"):
            if not getattr(self, key) or min(getattr(self, key)) < 2:
                problems.append(f"{key} needs values >= 2")
        if min(self.check_N, self.small_N) < 2:
            problems.append("check_N and small_N must be >= 2")
        if not 0 <= self.coupling_floor <= 1:
            problems.append("coupling_floor must lie in [0, 1]")
        if self.shape not in ("ball", "box"):
            problems.append("shape must be 'ball' or 'box'")
        if len(self.x0) != self.d:
            problems.append("x0 must have d coordinates")
        if self.alpha <= 0 or self.eps <= 0 or not 0 < self.gamma < 1:
            problems.append("need alpha > 0, eps > 0 and 0 < gamma < 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        if problems:
            raise ConfigError("; ".join(problems))

    # ------------------------------------------------------------ derived

    @property
    def gamma_lower(self) -> float:
        """Lower end of the gamma range under which the exit-time bound is sharp."""
        return 1 - self.delta_prime / (2 * (self.d - 1))

    def constraint_warnings(self) -> list[str]:
        out = []
        if not self.gamma_lower < self.gamma:
            out.append(f"gamma = {self.gamma:g} is below {self.gamma_lower:g}; "
                       "the excursion-count concentration is not in its asymptotic regime")
        return out

    def warn(self) -> None:
        for msg in self.constraint_warnings():
            warnings.warn(msg, ConstraintWarning, stacklevel=2)

    def make_shape(self) -> Shape:
        if self.shape == "ball":
            return Shape.ball(self.radius, self.d, center=self.x0)
        lo = [c - self.radius for c in self.x0]
        hi = [c + self.radius for c in self.x0]
        return Shape.box(lo, hi)

    def t_N(self, N: int) -> int:
        return math.ceil(self.t_factor * N ** (2 + self.delta))

    def eps_N(self, N: int) -> float:
        return math.sqrt(N ** (2 + self.delta_prime) / self.t_N(N))

    @property
    def cache(self) -> str | None:
        return self.cache_dir or None

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # ----------------------------------------------------------- text form

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _plain(value):
    return list(value) if isinstance(value, tuple) else value


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "tuple[float, ...]":
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"no parser for {key} ({kind})")


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse the key-value text; keys absent from the text keep the `base` values."""
    changes = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        changes[key] = _parse_value(key, value)
    base = base or ExperimentConfig()
    try:
        return dataclasses.replace(base, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(source: str | Path | None) -> ExperimentConfig:
    """`None` or "default" gives the built-in defaults; otherwise read the file."""
    if source is None or str(source) == "default":
        return ExperimentConfig()
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text())


DEFAULT_CONFIG = ExperimentConfig()
