"""Soft local times: simulating Markov chains from one shared Poisson point process.

A Poisson process on Sigma x R_+ with intensity mu(z) dv is explored upward.
Each chain raises its soft local time G by xi * rho(.), where rho(z) =
p(current, z) / mu(z), until exactly one new point lies below G; that point's
state is the next state of the chain. Two chains driven by the same points
have coupled ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

FIRST_STREAM = 0


class SupportError(RuntimeError):
    """The density vanishes on every state, so no point can be consumed."""


# ---------------------------------------------------------------- chains

@dataclass(frozen=True)
class FiniteChainSpec:
    """A Markov chain on states 0..n-1 given by its full transition matrix."""

    P: np.ndarray
    start: np.ndarray
    pi: np.ndarray | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("the transition matrix must be square")
        if np.any(P < 0) or np.abs(P.sum(axis=1) - 1).max() > 1e-10:
            raise ValueError("transition rows must be probability vectors")
        start = np.asarray(self.start, dtype=float)
        if start.shape != (len(P),) or abs(start.sum() - 1) > 1e-10 or np.any(start < 0):
            raise ValueError("the start law must be a probability vector over the states")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "start", start)
        if self.pi is None:
            object.__setattr__(self, "pi", stationary_law(P))
        else:
            object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))

    @property
    def n(self) -> int:
        return len(self.P)

    def invariance_defect(self) -> float:
        return float(np.abs(self.pi @ self.P - self.pi).sum())

    def verify(self, tol: float = 1e-8) -> None:
        defect = self.invariance_defect()
        if defect > tol:
            raise ValueError(f"pi is not invariant: ||pi P - pi||_1 = {defect:.3g}")

    def density(self, mu: np.ndarray) -> Callable[[int | None], np.ndarray]:
        """rho for the next step: p(s, .)/mu, or start/mu before the first step."""
        start = self.start / mu
        rows = self.P / mu[None, :]
        return lambda s: start if s is None else rows[s]

    def simulate(self, steps: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(steps, dtype=np.int64)
        cum = np.cumsum(self.P, axis=1)
        s = int(rng.choice(self.n, p=self.start))
        for i in range(steps):
            if i:
                s = int(min(np.searchsorted(cum[s], rng.random(), side="right"), self.n - 1))
            out[i] = s
        return out


def stationary_law(P: np.ndarray) -> np.ndarray:
    """Left Perron vector of an irreducible stochastic matrix."""
    n = len(P)
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.maximum(pi, 0.0) / np.maximum(pi, 0.0).sum()


def iid_chain(pi: np.ndarray, start: np.ndarray | None = None) -> FiniteChainSpec:
    pi = np.asarray(pi, dtype=float)
    return FiniteChainSpec(np.tile(pi, (len(pi), 1)), pi if start is None else start, pi)


def save_chain(chain: FiniteChainSpec, path: str | Path) -> None:
    """Text kernel file: a `states` line, a `start` line, then one matrix row per line."""
    labels = chain.labels or tuple(str(i) for i in range(chain.n))
    lines = ["states " + " ".join(labels), "start " + " ".join(repr(float(v)) for v in chain.start)]
    lines += [" ".join(repr(float(v)) for v in row) for row in chain.P]
    Path(path).write_text("\n".join(lines) + "\n")


def load_chain(path: str | Path) -> FiniteChainSpec:
    rows, labels, start = [], None, None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "states":
            labels = tuple(rest.split())
        elif head == "start":
            start = np.array([float(v) for v in rest.split()])
        else:
            rows.append([float(v) for v in line.split()])
    P = np.array(rows)
    if labels is not None and len(labels) != len(P):
        raise ValueError("state labels and matrix rows disagree in number")
    if start is None:
        start = np.full(len(P), 1.0 / len(P))
    return FiniteChainSpec(P, start, labels=labels)


def exact_mixing_time(P: np.ndarray, pi: np.ndarray, limit: int = 10_000) -> int:
    """inf{t : max_x TV(p_t(x, .), pi) <= 1/4} by matrix powers."""
    Pt = np.eye(len(P))
    for t in range(limit + 1):
        if 0.5 * np.abs(Pt - pi[None, :]).sum(axis=1).max() <= 0.25:
            return t
        Pt = Pt @ P
    raise RuntimeError("mixing time exceeds the search limit")


# ---------------------------------------------------------------- Poisson field

class PoissonField:
    """Poisson points on Sigma x R_+ with intensity mu(z) dv, generated lazily per state.

    The lowest point of every state comes from one vectorized stream; higher
    points of state z come from a stream keyed by (seed, z + 1), so the field
    is a deterministic function of (seed, mu).
    """

    def __init__(self, mu: np.ndarray, seed: int, chunk: int = 16):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise SupportError("the reference measure must have full support")
        self.mu = mu
        self.seed = int(seed)
        self.chunk = int(chunk)
        first = self._stream(FIRST_STREAM).exponential(size=len(mu))
        self._first = first / mu
        self._heights: dict[int, np.ndarray] = {}

    def _stream(self, key: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=np.array([self.seed, key], dtype=np.uint64)))

    def __len__(self) -> int:
        return len(self.mu)

    @property
    def first_heights(self) -> np.ndarray:
        return self._first

    def heights(self, z: int, count: int) -> np.ndarray:
        """The lowest `count` heights of state z, ascending."""
        z = int(z)
        if count <= 1:
            return self._first[z:z + 1][:count]
        have = self._heights.get(z)
        if have is None or len(have) < count:
            size = max(count, 2 * (len(have) if have is not None else self.chunk))
            gaps = self._stream(z + 1).exponential(size=size - 1) / self.mu[z]
            have = self._first[z] + np.concatenate([[0.0], np.cumsum(gaps)])
            self._heights[z] = have
        return have[:count]

    def height(self, z: int, k: int) -> float:
        """Height of the k-th lowest point (k = 0, 1, ...) of state z."""
        return float(self._first[z]) if k == 0 else float(self.heights(z, k + 1)[k])

    def count_below(self, z: int, level: float) -> int:
        """Number of points of state z with height <= level."""
        if level < self._first[z]:
            return 0
        n = self.chunk
        while True:
            h = self.heights(z, n)
            if h[-1] > level:
                return int(np.searchsorted(h, level, side="right"))
            n *= 2


# ---------------------------------------------------------------- engine

class SoftLocalTime:
    """One chain explored from a Poisson field.

    `density(s)` returns rho = p(s, .)/mu over all states for the step out of
    state s, and `density(None)` returns start/mu for the first step.
    """

    def __init__(self, field: PoissonField, density: Callable[[int | None], np.ndarray],
                 record_steps=()):
        self.field = field
        self.density = density
        n = len(field)
        self.G = np.zeros(n)
        self.consumed = np.zeros(n, dtype=np.int64)
        self.next_height = field.first_heights.copy()
        self.states: list[int] = []
        self.points: list[tuple[int, int]] = []
        self.record_steps = set(int(k) for k in record_steps)
        self.history: dict[int, np.ndarray] = {0: self.G.copy()} if 0 in self.record_steps else {}

    @property
    def n(self) -> int:
        return len(self.states)

    def step(self) -> int:
        rho = np.asarray(self.density(self.states[-1] if self.states else None), dtype=float)
        live = np.flatnonzero(rho > 0)
        if len(live) == 0:
            raise SupportError("the step density vanishes on every state")
        xi = (self.next_height[live] - self.G[live]) / rho[live]
        j = int(np.argmin(xi))
        z = int(live[j])
        self.G[live] += xi[j] * rho[live]
        # The consumed point sits exactly on the curve; pin it against rounding.
        self.G[z] = max(self.G[z], self.next_height[z])
        k = int(self.consumed[z])
        self.consumed[z] = k + 1
        self.next_height[z] = self.field.height(z, k + 1)
        self.states.append(z)
        self.points.append((z, k))
        if self.n in self.record_steps:
            self.history[self.n] = self.G.copy()
        return z

    def run(self, steps: int) -> "SoftLocalTime":
        for _ in range(int(steps)):
            self.step()
        return self

    def extend_to(self, steps: int) -> "SoftLocalTime":
        return self.run(max(0, int(steps) - self.n))

    def counts_at(self, m: int) -> np.ndarray:
        """Points consumed per state after m steps."""
        c = np.zeros(len(self.G), dtype=np.int64)
        if m > 0:
            np.add.at(c, np.asarray(self.states[:m], dtype=np.int64), 1)
        return c


def slt_simulate(chain: FiniteChainSpec, mu: np.ndarray, field: PoissonField, n: int,
                 record_steps=()) -> tuple[np.ndarray, np.ndarray, SoftLocalTime]:
    if n < 1:
        raise ValueError("at least one step is required")
    engine = SoftLocalTime(field, chain.density(np.asarray(mu, dtype=float)), record_steps)
    engine.run(n)
    return np.array(engine.states), engine.G.copy(), engine


# ---------------------------------------------------------------- coupled ranges

def lower_count(n: int, eps: float) -> int:
    return max(0, math.floor((1 - eps) * n + 1e-12))


def upper_count(n: int, eps: float) -> int:
    return math.ceil((1 + eps) * n - 1e-12)


@dataclass(frozen=True)
class InclusionReport:
    n: int
    eps: float
    lower_steps: int
    upper_steps: int
    left: bool
    right: bool
    left_points: bool
    right_points: bool
    curve_left: bool
    curve_right: bool
    methods_agree: bool

    @property
    def holds(self) -> bool:
        return self.left and self.right

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["holds"] = self.holds
        return d


def range_inclusion(small: SoftLocalTime, m_small: int, big: SoftLocalTime, m_big: int) -> dict:
    """Inclusion of the state ranges and of the consumed point sets after the given steps."""
    cs = small.counts_at(m_small)
    cb = big.counts_at(m_big)
    return {"states": bool(np.all((cs == 0) | (cb > 0))), "points": bool(np.all(cs <= cb))}


def _points_under(field: PoissonField, G: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Points of the field below G, counted per state (consumed ones only are candidates)."""
    out = counts.copy()
    for z in np.flatnonzero(counts):
        out[z] = field.count_below(int(z), float(G[z]))
    return out


def coupled_ranges(chain_Y, chain_Z, mu: np.ndarray, field: PoissonField, n: int,
                   eps: float) -> tuple[InclusionReport, SoftLocalTime, SoftLocalTime]:
    """Drive both chains from the same field and test the range inclusion event.

    The state-level event reads {Z_i}_{i <= (1-eps)n} in {Y_i}_{i <= n} in
    {Z_i}_{i <= (1+eps)n} with floor and ceiling rounding. The point-level
    version compares consumed points; it is recomputed from the G curves as a
    cross-check. The G-curve ordering is reported on the consumed states.
    """
    mu = np.asarray(mu, dtype=float)
    lo, hi = lower_count(n, eps), upper_count(n, eps)
    dY = chain_Y.density(mu) if isinstance(chain_Y, FiniteChainSpec) else chain_Y
    dZ = chain_Z.density(mu) if isinstance(chain_Z, FiniteChainSpec) else chain_Z
    Y = SoftLocalTime(field, dY, record_steps=(n,))
    Z = SoftLocalTime(field, dZ, record_steps=(lo, hi))
    Y.run(n)
    Z.run(hi)
    left = range_inclusion(Z, lo, Y, n)
    right = range_inclusion(Y, n, Z, hi)
    GY, GZlo, GZhi = Y.history[n], Z.history.get(lo, np.zeros(len(mu))), Z.history[hi]
    cY, cZlo, cZhi = Y.counts_at(n), Z.counts_at(lo), Z.counts_at(hi)
    # Points under each curve, recounted from the field.
    uY, uZlo, uZhi = (_points_under(field, GY, cY), _points_under(field, GZlo, cZlo),
                      _points_under(field, GZhi, cZhi))
    agree = (np.array_equal(uY, cY) and np.array_equal(uZlo, cZlo) and np.array_equal(uZhi, cZhi)
             and bool(np.all(uZlo <= uY)) == left["points"] and bool(np.all(uY <= uZhi)) == right["points"])
    seen = (cY > 0) | (cZhi > 0)
    report = InclusionReport(
        n=n, eps=eps, lower_steps=lo, upper_steps=hi,
        left=left["states"], right=right["states"],
        left_points=left["points"], right_points=right["points"],
        curve_left=bool(np.all(GZlo[seen] <= GY[seen])),
        curve_right=bool(np.all(GY[seen] <= GZhi[seen])),
        methods_agree=bool(agree))
    return report, Y, Z


# ---------------------------------------------------------------- theorem constants

@dataclass(frozen=True)
class TheoremConstants:
    g: np.ndarray = field(repr=False)
    pi: np.ndarray = field(repr=False)
    rho: dict = field(repr=False)          # chain name -> matrix rho[w, z]
    variance: dict = field(repr=False)     # chain name -> Var_pi(rho_z) per z
    pi_min: float = 0.0
    eps: float = 0.0
    k_eps: float = 0.0
    eps_bound: float = 0.0
    eps_condition: bool = False
    degenerate: bool = False
    mixing: dict = field(default_factory=dict)
    n_threshold: float = math.inf

    def as_dict(self) -> dict:
        return {"pi_min": self.pi_min, "eps": self.eps, "k_eps": self.k_eps,
                "eps_bound": self.eps_bound, "eps_condition": self.eps_condition,
                "degenerate": self.degenerate, "mixing": dict(self.mixing),
                "n_threshold": self.n_threshold}


def density_matrix(P: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """rho[w, z] = p(w, z) / mu(z)."""
    return np.asarray(P, dtype=float) / np.asarray(mu, dtype=float)[None, :]


def pi_variance(pi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Var_pi(rho_z) for every z, with rho[w, z] indexed by the conditioning state w."""
    mean = pi @ rho
    return pi @ (rho ** 2) - mean ** 2


def theorem_constants(chain_Y: FiniteChainSpec, chain_Z: FiniteChainSpec, mu: np.ndarray,
                      pi: np.ndarray, mixing_times: dict, eps: float) -> TheoremConstants:
    """g, rho, variances, k(eps), the condition on eps and the step threshold."""
    mu = np.asarray(mu, dtype=float)
    pi = np.asarray(pi, dtype=float)
    g = pi / mu
    pi_min = float(pi.min())
    rho, var = {}, {}
    ratios, bounds = [], []
    for name, chain in (("Y", chain_Y), ("Z", chain_Z)):
        R = density_matrix(chain.P, mu)
        V = pi_variance(pi, R)
        V = np.where(np.abs(V) < 1e-15 * np.maximum(R.max(axis=0) ** 2, 1e-300), 0.0, V)
        rho[name], var[name] = R, V
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios.append(np.where(V > 0, pi_min * eps ** 2 * g ** 2 / (6 * V), np.inf))
            bounds.append(V / (2 * R.max(axis=0) * g))
    r = np.concatenate(ratios)
    degenerate = bool(np.all(np.isinf(r)))
    k_eps = -math.inf if degenerate else -float(np.log2(r.min()))
    eps_bound = float(np.concatenate(bounds).min())
    condition = bool(0 < eps < eps_bound) and not degenerate
    t_min = min(mixing_times.values()) if mixing_times else math.nan
    threshold = 2 * k_eps * t_min if not degenerate else math.inf
    return TheoremConstants(g, pi, rho, var, pi_min, eps, k_eps, eps_bound, condition, degenerate,
                            dict(mixing_times), threshold)


@dataclass(frozen=True)
class FailureBound:
    value: float
    terms: dict
    vacuous: bool

    def as_dict(self) -> dict:
        return {"value": self.value, "terms": dict(self.terms), "vacuous": self.vacuous}


def failure_bound_evaluate(constants: TheoremConstants, n: int, eps: float, nu: dict,
                           C: float = 1.0, c: float = 1.0) -> FailureBound:
    """Right-hand side of the soft local time failure bound for given (C, c).

    `nu` maps chain name to its start law. The bound is flagged vacuous once
    it reaches 1 or when eps violates the admissible range.
    """
    g, pi, k = constants.g, constants.pi, constants.k_eps
    terms, total = {}, 0.0
    for name, V in constants.variance.items():
        start = np.asarray(nu[name], dtype=float)
        T = constants.mixing[name]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ratio = np.where(start > 0, pi / start, np.inf)
            t1 = np.full(len(g), math.exp(-c * n * eps ** 2))
            t2 = np.where(np.isinf(ratio), 0.0, np.exp(-c * n * eps * ratio))
            scale = np.where(V > 0, eps ** 2 * g ** 2 / V, np.inf)
            t3 = np.where(np.isinf(scale), 0.0, np.exp(-c * scale * n / (k * T)))
        part = C * float((t1 + t2 + t3).sum())
        terms[name] = part
        total += part
    return FailureBound(total, terms, vacuous=total >= 1 or not constants.eps_condition)
