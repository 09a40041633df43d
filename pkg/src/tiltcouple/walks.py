"""Nearest-neighbour walks on conductance networks: kernels, samplers, hitting times.

Every kernel lives on a finite lattice region with a neighbour table. A step
into a slot whose neighbour lies outside the region leaves the region: for the
killed walk this is killing, for the transient walks it is escape through the
truncation sphere. Inner loops are numba-compiled and draw from the caller's
numpy Generator, so the seeded stream is shared with the Python side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .lattice import (BallRegion, DeltaRegion, GeometryError, LatticeDomain, ball_region,
                      unit_steps)
from .measures import DiscreteDistribution

HIT, ESCAPE, BUDGET = 0, 1, 2
REASONS = {HIT: "hit", ESCAPE: "escape", BUDGET: "budget"}
NO_LIMIT = np.iinfo(np.int64).max // 4


@numba.njit(cache=True)
def _draw(cum_row, u):
    k = 0
    last = cum_row.shape[0] - 1
    while k < last and u >= cum_row[k]:
        k += 1
    return k


@numba.njit(cache=True)
def _fixed_steps(neighbors, cum, starts, steps, rng):
    n = starts.shape[0]
    ends = starts.copy()
    alive = np.ones(n, dtype=np.bool_)
    for i in range(n):
        x = starts[i]
        for _ in range(steps):
            y = neighbors[x, _draw(cum[x], rng.random())]
            if y < 0:
                alive[i] = False
                x = -1
                break
            x = y
        ends[i] = x
    return ends, alive


@numba.njit(cache=True)
def _hit_batch(neighbors, cum, starts, target, from_zero, budget, rng):
    """For each start: (final index, steps, reason) of the first-triggered stop."""
    n = starts.shape[0]
    ends = np.empty(n, dtype=np.int64)
    times = np.empty(n, dtype=np.int64)
    reasons = np.empty(n, dtype=np.int64)
    for i in range(n):
        x = starts[i]
        t = 0
        if from_zero and target[x]:
            ends[i] = x
            times[i] = 0
            reasons[i] = 0
            continue
        reason = 2
        while t < budget:
            y = neighbors[x, _draw(cum[x], rng.random())]
            t += 1
            if y < 0:
                reason = 1
                break
            x = y
            if target[x]:
                reason = 0
                break
        ends[i] = x
        times[i] = t
        reasons[i] = reason
    return ends, times, reasons


@numba.njit(cache=True)
def _record_path(neighbors, cum, start, target, from_zero, budget, rng):
    cap = 1024
    path = np.empty(cap, dtype=np.int64)
    path[0] = start
    length = 1
    x = start
    if from_zero and target[x]:
        return path[:1], 0, -1
    while length - 1 < budget:
        k = _draw(cum[x], rng.random())
        y = neighbors[x, k]
        if y < 0:
            return path[:length], 1, k
        if length == cap:
            cap *= 2
            grown = np.empty(cap, dtype=np.int64)
            grown[:length] = path[:length]
            path = grown
        path[length] = y
        length += 1
        x = y
        if target[x]:
            return path[:length], 0, -1
    return path[:length], 2, -1


@numba.njit(cache=True)
def _bridge_walk(neighbors, prob, h, start, stop, record, budget, rng):
    """Doob h-transform walk from `start` until it enters `stop`.

    Returns (final index, steps, visited record-sites, their times, ok flag).
    The transform moves to slot k with probability prob[x, k] h(y_k) / sum_j
    prob[x, j] h(y_j); leaving the region has h = 0.
    """
    cap = 64
    seen = np.empty(cap, dtype=np.int64)
    when = np.empty(cap, dtype=np.int64)
    n_seen = 0
    x = start
    t = 0
    nslot = neighbors.shape[1]
    w = np.empty(nslot)
    if record[x]:
        seen[0] = x
        when[0] = 0
        n_seen = 1
    while t < budget:
        total = 0.0
        for k in range(nslot):
            y = neighbors[x, k]
            w[k] = prob[x, k] * h[y] if y >= 0 else 0.0
            total += w[k]
        if total <= 0.0:
            return x, t, seen[:n_seen], when[:n_seen], False
        u = rng.random() * total
        acc = 0.0
        j = nslot - 1
        for k in range(nslot):
            acc += w[k]
            if u < acc:
                j = k
                break
        while w[j] <= 0.0:
            j -= 1
        x = neighbors[x, j]
        t += 1
        if record[x]:
            if n_seen == cap:
                cap *= 2
                grown = np.empty(cap, dtype=np.int64)
                grown[:n_seen] = seen[:n_seen]
                seen = grown
                grown_t = np.empty(cap, dtype=np.int64)
                grown_t[:n_seen] = when[:n_seen]
                when = grown_t
            seen[n_seen] = x
            when[n_seen] = t
            n_seen += 1
        if stop[x]:
            return x, t, seen[:n_seen], when[:n_seen], True
    return x, t, seen[:n_seen], when[:n_seen], False


@numba.njit(cache=True)
def _count_returns(neighbors, cum, starts, phase_out, in_B, in_D, t, rng):
    """Number of k in [0, t) with X_k in B whose last earlier visit to B or Delta was in Delta."""
    n = starts.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        x = starts[i]
        out = phase_out[i]
        c = 0
        for _ in range(t):
            if in_B[x]:
                if out:
                    c += 1
                out = False
            elif in_D[x]:
                out = True
            x = neighbors[x, _draw(cum[x], rng.random())]
        counts[i] = c
    return counts


@numba.njit(cache=True)
def _first_return(neighbors, cum, start, in_B, in_D, rng):
    """Walk to Delta (time D_0) and then to B (time R_1).

    Returns (R_1, X_{R_1}, B-sites visited before R_1, their times).
    """
    cap = 64
    seen = np.empty(cap, dtype=np.int64)
    when = np.empty(cap, dtype=np.int64)
    n_seen = 0
    x = start
    t = 0
    out = in_D[x]
    while True:
        if in_B[x]:
            if out:
                return t, x, seen[:n_seen], when[:n_seen]
            if n_seen == cap:
                cap *= 2
                grown = np.empty(cap, dtype=np.int64)
                grown[:n_seen] = seen[:n_seen]
                seen = grown
                grown_t = np.empty(cap, dtype=np.int64)
                grown_t[:n_seen] = when[:n_seen]
                when = grown_t
            seen[n_seen] = x
            when[n_seen] = t
            n_seen += 1
        elif in_D[x]:
            out = True
        x = neighbors[x, _draw(cum[x], rng.random())]
        t += 1


@numba.njit(cache=True)
def _excursion_counts(neighbors, cum, starts, in_B, in_D, budget, rng):
    """Excursions from B to Delta made by each trajectory before it leaves the region."""
    n = starts.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    complete = np.ones(n, dtype=np.bool_)
    for i in range(n):
        x = starts[i]
        out = False
        c = 1
        t = 0
        while True:
            if t >= budget:
                complete[i] = False
                break
            y = neighbors[x, _draw(cum[x], rng.random())]
            t += 1
            if y < 0:
                break
            x = y
            if in_D[x]:
                out = True
            elif in_B[x] and out:
                c += 1
                out = False
        counts[i] = c
    return counts, complete


@dataclass(frozen=True)
class WalkKernel:
    """Conductance walk p(x, y) = w(y) / sum_z w(z) on a finite region.

    `prob[i, k]` is the probability of the k-th unit step from region point i,
    including the mass of steps that leave the region (`outside_weight` is the
    weight carried by every point outside the region).
    """

    kind: str
    region: LatticeDomain = field(repr=False)
    weights: np.ndarray = field(repr=False)
    outside_weight: float
    prob: np.ndarray = field(repr=False)
    lam: float | None = None
    cum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.cum is None:
            cum = np.cumsum(self.prob, axis=1)
            cum[:, -1] = np.inf
            cum.setflags(write=False)
            object.__setattr__(self, "cum", cum)

    @property
    def neighbors(self) -> np.ndarray:
        return self.region.neighbors

    @property
    def d(self) -> int:
        return self.region.d

    @property
    def identifier(self) -> str:
        return f"{self.kind}:n={len(self.region)}:N={self.region.N}"


def neighbour_weights(region: LatticeDomain, weights: np.ndarray, outside_weight: float) -> np.ndarray:
    nb = region.neighbors
    return np.where(nb >= 0, weights[np.where(nb >= 0, nb, 0)], outside_weight)


def kernel_from_weights(region: LatticeDomain, weights, outside_weight: float, kind: str = "custom",
                        lam: float | None = None) -> WalkKernel:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(region),):
        raise ValueError("one weight per region point is required")
    if np.any(weights < 0) or outside_weight < 0:
        raise ValueError("weights must be nonnegative")
    nw = neighbour_weights(region, weights, outside_weight)
    total = nw.sum(axis=1)
    if np.any(total <= 0):
        bad = region.points[np.argmax(total <= 0)]
        raise GeometryError(f"all neighbour weights vanish at {bad.tolist()}")
    prob = nw / total[:, None]
    prob.setflags(write=False)
    return WalkKernel(kind, region, weights, float(outside_weight), prob, lam)


def srw_kernel_on(region: LatticeDomain) -> WalkKernel:
    """Simple random walk; leaving the region is killing (or escape)."""
    return kernel_from_weights(region, np.ones(len(region)), 1.0, kind="srw")


def phi_kernel(pair) -> WalkKernel:
    """The tilted walk p_N(x, y) = phi(y) / (2d lambda phi(x)) on D_N."""
    kernel = kernel_from_weights(pair.domain, pair.phi, 0.0, kind="phi", lam=pair.lam)
    return kernel


def phi_kernel_defect(pair) -> float:
    """Max difference between the eigen-ratio and conductance forms of p_N."""
    kernel = phi_kernel(pair)
    nw = neighbour_weights(pair.domain, pair.phi, 0.0)
    ratio_form = nw / (2 * pair.d * pair.lam * pair.phi[:, None])
    return float(np.abs(ratio_form - kernel.prob).max())


def reversibility_defect(kernel: WalkKernel, measure: np.ndarray) -> float:
    """max |m(x) p(x, y) - m(y) p(y, x)| over in-region edges."""
    nb = kernel.neighbors
    steps = unit_steps(kernel.d)
    opposite = np.arange(len(steps)) ^ 1
    rows, slots = np.nonzero(nb >= 0)
    cols = nb[rows, slots]
    fwd = measure[rows] * kernel.prob[rows, slots]
    back = measure[cols] * kernel.prob[cols, opposite[slots]]
    return float(np.abs(fwd - back).max()) if len(rows) else 0.0


@dataclass(frozen=True)
class TiltingField:
    """Psi_N = phi_N on the ball B^eps, 1 elsewhere, tabulated on a truncation ball."""

    pair: object = field(repr=False)
    ball: BallRegion
    region: LatticeDomain = field(repr=False)
    values: np.ndarray = field(repr=False)
    in_ball: np.ndarray = field(repr=False)

    def at(self, coords) -> np.ndarray:
        coords = np.atleast_2d(coords)
        inside = self.ball.contains(coords)
        out = np.ones(len(coords))
        if inside.any():
            out[inside] = self.pair.phi_at(coords[inside])
        return out

    def neighbour_mean(self, coords) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        steps = unit_steps(coords.shape[1])
        return sum(self.at(coords + e) for e in steps) / len(steps)

    @property
    def truncation_radius(self) -> float:
        return float(np.sqrt(((self.region.points - np.asarray(self.ball.center)) ** 2).sum(1).max()))


def build_tilting_field(pair, ball_eps: BallRegion, truncation_radius: float) -> TiltingField:
    """Tabulate Psi_N on the lattice ball of radius `truncation_radius` around the B^eps center."""
    pts = ball_eps.points()
    idx = pair.domain.index_of(pts)
    if np.any(idx < 0):
        raise GeometryError("B^eps must lie inside D_N")
    if np.any(pair.phi[idx] <= 0):
        raise GeometryError("phi must be positive on B^eps")
    if truncation_radius <= ball_eps.radius + 1:
        raise GeometryError("truncation sphere must enclose B^eps with room to spare")
    trunc = ball_region(ball_eps.center, truncation_radius)
    region = LatticeDomain(trunc.points(), N=pair.N)
    in_ball = ball_eps.contains(region.points)
    values = np.ones(len(region))
    values[in_ball] = pair.phi_at(region.points[in_ball])
    return TiltingField(pair, ball_eps, region, values, in_ball)


def psi_kernel(field: TiltingField) -> WalkKernel:
    """Psi_N walk on the truncation ball; leaving it counts as escape to infinity."""
    return kernel_from_weights(field.region, field.values, 1.0, kind="psi", lam=field.pair.lam)


def step_distribution(kernel: WalkKernel, x) -> DiscreteDistribution:
    x = np.asarray(x, dtype=np.int64)
    i = int(kernel.region.index_of(x)[0])
    if i < 0:
        raise GeometryError(f"{x.tolist()} is outside the kernel region")
    steps = unit_steps(kernel.d)
    row = kernel.prob[i]
    keep = row > 0
    return DiscreteDistribution(x + steps[keep], row[keep])


@dataclass(frozen=True)
class StopCondition:
    """First-triggered stop: hitting `target`, leaving the region, or a step budget.

    With `from_zero` the start itself counts as a hit (H_K); otherwise only
    times >= 1 count (the return time H-bar_K). Ties at one step resolve as
    hit > escape > budget.
    """

    target: np.ndarray | None = None
    from_zero: bool = True
    budget: int | None = None


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    reason: str
    kernel_id: str = ""
    seed: int | None = None
    exit_point: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.points) - 1

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def dump(self, path: str | Path) -> None:
        """Debug dump: header with seed and kernel id, then one point per line."""
        lines = [f"# seed {self.seed} kernel {self.kernel_id} reason {self.reason}"]
        lines += [" ".join(str(int(c)) for c in p) for p in self.points]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Trajectory":
        text = Path(path).read_text().splitlines()
        head = text[0].split()
        seed = None if head[2] == "None" else int(head[2])
        pts = np.array([[int(c) for c in line.split()] for line in text[1:]], dtype=np.int64)
        return cls(pts, head[6], head[4], seed)


def _mask_for(kernel: WalkKernel, target) -> np.ndarray:
    mask = np.zeros(len(kernel.region), dtype=bool)
    if target is None:
        return mask
    target = np.asarray(target)
    if target.dtype == bool:
        return target
    idx = kernel.region.index_of(np.atleast_2d(target).reshape(-1, kernel.d))
    mask[idx[idx >= 0]] = True
    return mask


def sample_path(kernel: WalkKernel, start, stop: StopCondition, rng: np.random.Generator,
                seed: int | None = None) -> Trajectory:
    start = np.asarray(start, dtype=np.int64)
    i = int(kernel.region.index_of(start)[0])
    if i < 0:
        raise GeometryError("start point outside the kernel region")
    mask = _mask_for(kernel, stop.target)
    budget = NO_LIMIT if stop.budget is None else int(stop.budget)
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    path, reason, slot = _record_path(kernel.neighbors, kernel.cum, i, mask,
                                      bool(stop.from_zero), budget, rng)
    pts = kernel.region.points[path]
    exit_point = pts[-1] + unit_steps(kernel.d)[slot] if reason == ESCAPE else None
    return Trajectory(pts, REASONS[int(reason)], kernel.identifier, seed, exit_point)


def hit_batch(kernel: WalkKernel, starts: np.ndarray, target_mask: np.ndarray,
              rng: np.random.Generator, from_zero: bool = True, budget: int | None = None):
    """Vectorised stopping: (final indices, times, reason codes) per start index."""
    b = NO_LIMIT if budget is None else int(budget)
    return _hit_batch(kernel.neighbors, kernel.cum, np.asarray(starts, dtype=np.int64),
                      np.asarray(target_mask, dtype=np.bool_), bool(from_zero), b, rng)


def run_fixed_steps(kernel: WalkKernel, starts: np.ndarray, steps: int, rng: np.random.Generator):
    """Run each start for exactly `steps` steps; returns (end index or -1, alive flags)."""
    return _fixed_steps(kernel.neighbors, kernel.cum, np.asarray(starts, dtype=np.int64),
                        int(steps), rng)


def bridge_walk(kernel: WalkKernel, h: np.ndarray, start: int, stop_mask: np.ndarray,
                record_mask: np.ndarray, rng: np.random.Generator, budget: int | None = None):
    """Walk conditioned through the harmonic function h.

    Returns (final index, steps, visited record-sites, their times, ok flag).
    """
    b = NO_LIMIT if budget is None else int(budget)
    return _bridge_walk(kernel.neighbors, kernel.prob, np.asarray(h, dtype=float), int(start),
                        stop_mask, record_mask, b, rng)


def _points_set(points) -> set[tuple[int, ...]]:
    return {tuple(int(c) for c in p) for p in np.atleast_2d(points)} if len(points) else set()


def hitting_times(traj: Trajectory, K) -> tuple[int | None, int | None]:
    """(H_K, H-bar_K): first index >= 0 (resp. >= 1) in K; None encodes infinity."""
    pts = traj.points
    if isinstance(K, np.ndarray) and K.dtype == bool:
        raise TypeError("pass K as a point array or a predicate")
    inK = K(pts) if callable(K) else np.array([tuple(p) in _points_set(K) for p in pts.tolist()],
                                              dtype=bool)
    hits = np.flatnonzero(inK)
    first = int(hits[0]) if len(hits) else None
    later = hits[hits >= 1]
    return first, (int(later[0]) if len(later) else None)


@dataclass(frozen=True)
class ExcursionRecord:
    entry: np.ndarray
    exit: np.ndarray
    path: np.ndarray
    start_index: int


@dataclass(frozen=True)
class ExcursionDecomposition:
    departure_0: int | None
    returns: list[int]
    departures: list[int]
    records: list[ExcursionRecord]
    truncated: bool


def excursion_decomposition(traj: Trajectory, in_B, in_Delta) -> ExcursionDecomposition:
    """Times D_0 = H_Delta, R_i = first B-hit after D_{i-1}, D_i = first Delta-hit after R_i.

    `in_B` and `in_Delta` are vectorised membership predicates (or DeltaRegion
    for the second).
    """
    pts = traj.points
    if isinstance(in_Delta, DeltaRegion):
        region = in_Delta
        in_Delta = lambda p: _delta_member(region, p)  # noqa: E731
    b = np.asarray(in_B(pts), dtype=bool)
    f = np.asarray(in_Delta(pts), dtype=bool)
    far = np.flatnonzero(f)
    if len(far) == 0:
        return ExcursionDecomposition(None, [], [], [], True)
    d0 = int(far[0])
    returns, departures, records = [], [], []
    t = d0
    truncated = False
    near = np.flatnonzero(b)
    while True:
        nxt = near[near > t]
        if len(nxt) == 0:
            break
        r = int(nxt[0])
        out = far[far > r]
        if len(out) == 0:
            truncated = True
            returns.append(r)
            break
        dd = int(out[0])
        returns.append(r)
        departures.append(dd)
        records.append(ExcursionRecord(pts[r], pts[dd], pts[r:dd + 1], r))
        t = dd
    return ExcursionDecomposition(d0, returns, departures, records, truncated)


def _delta_member(region: DeltaRegion, pts: np.ndarray) -> np.ndarray:
    idx = region.domain.index_of(pts)
    return np.where(idx >= 0, region.mask[np.where(idx >= 0, idx, 0)], False)


def stationary_weights(pair) -> DiscreteDistribution:
    return DiscreteDistribution(pair.domain.points, pair.phi ** 2)


def stationary_start(pair, rng: np.random.Generator, size=None):
    """Sample from c_N phi_N^2 (indices are returned with `size`, else one point)."""
    dist = stationary_weights(pair)
    if size is None:
        return dist.sample(rng)
    return dist.sample_index(rng, size)


def path_range(traj: Trajectory, t: int, region=None) -> set[tuple[int, ...]]:
    """{X_0, ..., X_t} as a set of tuples, optionally intersected with a predicate region."""
    if t < 0 or t > len(traj):
        raise ValueError(f"time {t} outside the trajectory (length {len(traj)})")
    pts = traj.points[: t + 1]
    if region is not None:
        pts = pts[np.asarray(region(pts), dtype=bool)]
    return _points_set(pts) if len(pts) else set()


def log_importance_weight(pair, path_indices: np.ndarray) -> float:
    """log of phi(X_tau) lambda^(-tau) / phi(X_0) along a recorded path of domain indices."""
    tau = len(path_indices) - 1
    return (math.log(pair.phi[path_indices[-1]]) - math.log(pair.phi[path_indices[0]])
            - tau * math.log(pair.lam))
