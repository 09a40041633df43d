"""Discrete potential theory for the simple and the tilted walks.

Escape probabilities are computed on a finite lattice ball. The truncated
escape e_L(z) = P_z(leave the ball before returning to K) overestimates the
true escape. For the simple random walk the overshoot is
e_L - e = M e with M[z, k] = E_z[leave first; G(X_exit, k)], and the Green
function far from K is bracketed by a_d |x|^(2-d) (1 -+ |x|^(-2)), which
turns the identity into a deterministic two-sided bracket. For the tilted
walk only a cruder bracket is available: after leaving the truncation ball
the walk is a simple random walk until it re-enters B^eps, which it does with
probability about (radius of B^eps) / (truncation radius).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .harmonic import conductance_matrix, dirichlet_solve, solve_spd
from .lattice import LatticeDomain, ball_region, unit_steps
from .walks import ESCAPE, WalkKernel, hit_batch, neighbour_weights, srw_kernel_on

DEFAULT_SRW_RADIUS = 20
BRACKET_ITERATIONS = 200


def green_constant(d: int) -> float:
    """a_d with G(x) ~ a_d |x|^(2-d) for the discrete-time simple random walk."""
    return (d / 2) * math.gamma(d / 2 - 1) * math.pi ** (-d / 2)


def green_envelope(dist: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(lower, upper) envelopes a_d r^(2-d) (1 -+ r^-2) of the far-field Green function."""
    r = np.asarray(dist, dtype=float)
    lead = green_constant(d) * r ** (2 - d)
    return lead * np.clip(1 - r ** -2, 0, None), lead * (1 + r ** -2)


@dataclass(frozen=True)
class EscapeEstimate:
    points: np.ndarray
    value: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    stderr: np.ndarray | None = None
    method: str = "bracket"
    flagged: bool = False

    @property
    def width(self) -> float:
        if self.lower is None:
            return math.inf
        return float((self.upper - self.lower).max())


@dataclass(frozen=True)
class EquilibriumMeasure:
    support: np.ndarray
    weights: np.ndarray
    method: str
    lower: float | None = None
    upper: float | None = None
    kind: str = "srw"

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def capacity(self) -> float:
        return self.total

    @property
    def harmonic(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @property
    def relative_width(self) -> float:
        if self.lower is None:
            return math.inf
        return (self.upper - self.lower) / self.total

    def key(self) -> str:
        return hashlib.sha1(self.support.tobytes()).hexdigest()[:12]


def srw_region_around(K: np.ndarray, radius: float = DEFAULT_SRW_RADIUS) -> LatticeDomain:
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    center = np.rint(K.mean(axis=0)).astype(np.int64)
    reach = float(np.sqrt(((K - center) ** 2).sum(axis=1).max()))
    return LatticeDomain(ball_region(center, radius + reach).points())


def _mask(region: LatticeDomain, K: np.ndarray) -> np.ndarray:
    idx = region.index_of(np.atleast_2d(K))
    if np.any(idx < 0):
        raise ValueError("K must lie inside the solve region")
    m = np.zeros(len(region), dtype=bool)
    m[idx] = True
    return m


def truncated_escape(kernel: WalkKernel, K_mask: np.ndarray) -> np.ndarray:
    """e_L(z) = P_z(leave the region before H-bar_K) for every region point z."""
    region = kernel.region
    hit_first = dirichlet_solve(region.neighbors, kernel.weights, kernel.outside_weight,
                                K_mask, np.zeros(int(K_mask.sum())), escape_values=1.0)
    # For z in K one step is taken before the return clock starts.
    nb = region.neighbors
    vals = np.where(nb >= 0, hit_first[np.where(nb >= 0, nb, 0)], 1.0)
    vals = np.where((nb >= 0) & K_mask[np.where(nb >= 0, nb, 0)], 0.0, vals)
    esc = (kernel.prob * vals).sum(axis=1)
    return np.where(K_mask, esc, hit_first)


def _overshoot_tables(kernel: WalkKernel, K_mask: np.ndarray):
    """M_lo, M_hi with M[z, k] bracketing E_z[leave before H-bar_K; G(X_exit, k)], z, k in K."""
    region = kernel.region
    d = region.d
    K_idx = np.flatnonzero(K_mask)
    K_pts = region.points[K_idx]
    steps = unit_steps(d)
    exits = region.points[:, None, :] + steps[None, :, :]
    tables = []
    for which in (0, 1):
        cols = []
        for k in K_pts:
            dist = np.sqrt(((exits - k) ** 2).sum(axis=2))
            cols.append(green_envelope(np.maximum(dist, 1.0), d)[which])
        slot_vals = np.stack(cols, axis=-1)
        u = dirichlet_solve(region.neighbors, kernel.weights, kernel.outside_weight, K_mask,
                            np.zeros((len(K_idx), len(K_pts))), slot_values=slot_vals)
        nb = region.neighbors[K_idx]
        inside = nb >= 0
        nbs = np.where(inside, nb, 0)
        vals = np.where(inside[..., None], u[nbs], slot_vals[K_idx])
        vals = np.where((inside & K_mask[nbs])[..., None], 0.0, vals)
        tables.append(np.einsum("sk,skj->sj", kernel.prob[K_idx], vals))
    return tables[0], tables[1]


def srw_escape_bracket(K: np.ndarray, radius: float = DEFAULT_SRW_RADIUS) -> EscapeEstimate:
    """Deterministic bracket of P_z(H-bar_K = infinity), z in K, for the simple random walk."""
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    region = srw_region_around(K, radius)
    kernel = srw_kernel_on(region)
    K_mask = _mask(region, K)
    order = region.index_of(K)
    e_L = truncated_escape(kernel, K_mask)
    M_lo, M_hi = _overshoot_tables(kernel, K_mask)
    pos = np.searchsorted(np.flatnonzero(K_mask), order)
    eL = e_L[np.flatnonzero(K_mask)]
    hi, lo = eL.copy(), np.zeros_like(eL)
    for _ in range(BRACKET_ITERATIONS):
        lo_new = np.maximum(eL - M_hi @ hi, 0.0)
        hi_new = np.minimum(eL - M_lo @ lo_new, hi)
        done = np.allclose(lo_new, lo, rtol=0, atol=1e-15) and np.allclose(hi_new, hi, rtol=0, atol=1e-15)
        lo, hi = lo_new, hi_new
        if done:
            break
    lo, hi = lo[pos], hi[pos]
    return EscapeEstimate(K, 0.5 * (lo + hi), lo, hi, method="bracket")


def psi_escape_bracket(kernel: WalkKernel, K_mask: np.ndarray, tilt_radius: float,
                       center, max_width: float = 0.01) -> EscapeEstimate:
    """Bracket of the tilted escape from K using the truncated escape as the upper end.

    After leaving the truncation ball the tilted walk follows the simple random
    walk until it comes back to the tilt ball, so the probability of ever
    returning is at most about (tilt radius + 1) / (truncation radius); this
    ratio, inflated by (1 + 2/tilt radius) for lattice effects, gives the lower end.
    """
    e_L = truncated_escape(kernel, K_mask)
    pts = kernel.region.points
    exit_radius = float(np.sqrt(((pts[kernel.region.inner_mask] - np.asarray(center)) ** 2)
                                .sum(axis=1).min())) + 1
    q = min(1.0, (tilt_radius + 1) / exit_radius * (1 + 2 / max(tilt_radius, 1)))
    idx = np.flatnonzero(K_mask)
    upper = e_L[idx]
    lower = upper * (1 - q)
    flagged = bool((upper - lower).max() > max_width)
    return EscapeEstimate(pts[idx], upper, lower, upper, method="bracket", flagged=flagged)


def escape_mc(kernel: WalkKernel, K_mask: np.ndarray, starts: np.ndarray, samples: int,
              rng: np.random.Generator, budget: int | None = None) -> EscapeEstimate:
    """Monte Carlo escape frequencies (escape = leaving the truncation region)."""
    values, errs = [], []
    for s in np.atleast_1d(starts):
        _, _, reasons = hit_batch(kernel, np.full(samples, s), K_mask, rng, from_zero=False,
                                  budget=budget)
        p = float((reasons == ESCAPE).mean())
        values.append(p)
        errs.append(math.sqrt(max(p * (1 - p), 1e-300) / samples))
    pts = kernel.region.points[np.atleast_1d(starts)]
    return EscapeEstimate(pts, np.array(values), stderr=np.array(errs), method="mc")


def escape_probability(K: np.ndarray, z=None, mode: str = "bracket", kernel: WalkKernel | None = None,
                       radius: float = DEFAULT_SRW_RADIUS, samples: int = 10_000,
                       rng: np.random.Generator | None = None, max_width: float = 0.01) -> EscapeEstimate:
    """P_z(H-bar_K = infinity) for the simple random walk, by bracket solve or Monte Carlo."""
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    if mode == "bracket":
        est = srw_escape_bracket(K, radius)
        if z is not None:
            i = int(np.flatnonzero((K == np.asarray(z)).all(axis=1))[0])
            est = EscapeEstimate(K[i:i + 1], est.value[i:i + 1], est.lower[i:i + 1],
                                 est.upper[i:i + 1])
        return EscapeEstimate(est.points, est.value, est.lower, est.upper, method="bracket",
                              flagged=est.width > max_width)
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("Monte Carlo mode needs an rng")
    region = kernel.region if kernel is not None else srw_region_around(K, radius)
    kern = kernel if kernel is not None else srw_kernel_on(region)
    K_mask = _mask(region, K)
    starts = region.index_of(np.atleast_2d(z if z is not None else K))
    return escape_mc(kern, K_mask, starts, samples, rng)


def equilibrium_measure(K: np.ndarray, mode: str = "bracket", radius: float = DEFAULT_SRW_RADIUS,
                        escape: EscapeEstimate | None = None, **kw) -> EquilibriumMeasure:
    """Simple random walk e_K(x) = P_x(H-bar_K = infinity) on K; capacity is its mass."""
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    est = escape if escape is not None else escape_probability(K, mode=mode, radius=radius, **kw)
    lower = float(est.lower.sum()) if est.lower is not None else None
    upper = float(est.upper.sum()) if est.upper is not None else None
    return EquilibriumMeasure(K, est.value, est.method, lower, upper, kind="srw")


def tilted_equilibrium_measure(kernel: WalkKernel, K_mask: np.ndarray, tilt_radius: float,
                               center, lam: float | None = None) -> EquilibriumMeasure:
    """e^h_K(z) = P^h_z(H-bar_K = infinity) h(z) h-bar(z) with the truncated escape.

    The truncated escape is the exact escape of the simulated (truncated) walk,
    so it is used as the weight; the bracket of the untruncated one is carried.
    """
    est = psi_escape_bracket(kernel, K_mask, tilt_radius, center)
    idx = np.flatnonzero(K_mask)
    h = kernel.weights[idx]
    hbar = neighbour_weights(kernel.region, kernel.weights, kernel.outside_weight)[idx].mean(axis=1)
    factor = h * hbar
    weights = factor * est.upper
    return EquilibriumMeasure(kernel.region.points[idx], weights, "bracket",
                              float((factor * est.lower).sum()), float(weights.sum()), kind="psi")


def green_column(kernel: WalkKernel, y_index: int) -> np.ndarray:
    """G(., y): expected visits to y before leaving the region, for every start."""
    region = kernel.region
    C = conductance_matrix(region.neighbors, kernel.weights)
    n_out = (region.neighbors < 0).sum(axis=1)
    total = C.sum(axis=1).A1 + kernel.weights * kernel.outside_weight * n_out
    A = sp.diags(total) - C
    rhs = np.zeros(len(region))
    rhs[y_index] = total[y_index]
    return solve_spd(A, rhs)


@dataclass(frozen=True)
class GreenEstimate:
    source: tuple[int, ...]
    target: tuple[int, ...]
    value: float
    lower: float | None = None
    upper: float | None = None
    stderr: float | None = None


def tilted_green(kernel: WalkKernel, x, y) -> GreenEstimate:
    """Green function of the (truncated) walk, from a direct solve.

    For simple random walk kernels the far-field envelope brackets the part of
    the untruncated Green function accumulated after the first exit.
    """
    region = kernel.region
    xi, yi = (int(region.index_of(np.atleast_2d(p))[0]) for p in (x, y))
    col = green_column(kernel, yi)
    value = float(col[xi])
    lower = upper = None
    if kernel.kind == "srw":
        outer = region.points[region.inner_mask]
        dist = np.sqrt(((outer - region.points[yi]) ** 2).sum(axis=1)).min() + 1
        _, hi = green_envelope(np.array([dist]), region.d)
        lower, upper = value, value + float(hi[0])
    return GreenEstimate(tuple(np.atleast_1d(x).tolist()), tuple(np.atleast_1d(y).tolist()),
                         value, lower, upper)


def last_exit_check(kernel: WalkKernel, K_mask: np.ndarray, phi_values: np.ndarray, lam: float,
                    tilt_radius: float, center) -> float:
    """max over x in K of |sum_y phi^-2(y) e^Psi_K(y) G^Psi(x, y) - lambda|, truncated walk."""
    eq = tilted_equilibrium_measure(kernel, K_mask, tilt_radius, center, lam)
    idx = np.flatnonzero(K_mask)
    total = np.zeros(len(idx))
    for j, y in enumerate(idx):
        col = green_column(kernel, int(y))
        total += col[idx] * eq.weights[j] / phi_values[j] ** 2
    return float(np.abs(total - lam).max())


def single_point_check(kernel: WalkKernel, x_index: int, phi_value: float, lam: float,
                       tilt_radius: float, center) -> float:
    mask = np.zeros(len(kernel.region), dtype=bool)
    mask[x_index] = True
    return last_exit_check(kernel, mask, np.array([phi_value]), lam, tilt_radius, center)


@dataclass
class InterlacementSample:
    level: float
    K: np.ndarray
    labels: np.ndarray
    traces: list[np.ndarray] = field(repr=False)

    @property
    def count(self) -> int:
        return int((self.labels <= self.level).sum())

    def trace(self, u: float | None = None) -> set[tuple[int, ...]]:
        """Points of K visited by trajectories with label at most u."""
        u = self.level if u is None else u
        out: set[tuple[int, ...]] = set()
        for lab, tr in zip(self.labels, self.traces):
            if lab > u:
                break
            out.update(map(tuple, tr.tolist()))
        return out


def poisson_labels(rate: float, u: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times in [0, u] of a Poisson process of intensity `rate` (sorted)."""
    if u <= 0 or rate <= 0:
        return np.empty(0)
    labels = []
    t = rng.exponential(1.0 / rate)
    while t <= u:
        labels.append(t)
        t += rng.exponential(1.0 / rate)
    return np.asarray(labels)


def sample_interlacement_trace(kernel: WalkKernel, eq: EquilibriumMeasure, u: float,
                               rng: np.random.Generator, budget: int | None = None) -> InterlacementSample:
    """Trace on K of Poisson(u cap(K)) trajectories started from the harmonic measure.

    Labels are the Poisson arrival times, so restricting to labels <= u' gives a
    sample at every smaller level from the same draw.
    """
    from .walks import StopCondition, sample_path

    if u < 0:
        raise ValueError("level must be nonnegative")
    labels = poisson_labels(eq.capacity, u, rng)
    region = kernel.region
    K_mask = _mask(region, eq.support)
    harm = np.cumsum(eq.harmonic)
    traces = []
    for _ in labels:
        j = min(int(np.searchsorted(harm, rng.random() * harm[-1], side="right")), len(harm) - 1)
        traj = sample_path(kernel, eq.support[j], StopCondition(budget=budget), rng)
        idx = region.index_of(traj.points)
        traces.append(np.unique(traj.points[K_mask[idx]], axis=0))
    return InterlacementSample(u, eq.support, labels, traces)


def vacancy_law_check(kernel: WalkKernel, eq: EquilibriumMeasure, u: float, trials: int,
                      rng: np.random.Generator, subset: np.ndarray | None = None,
                      subset_capacity: float | None = None) -> dict:
    """Frequency of {trace avoids the subset} against exp(-u cap(subset)).

    With no subset the whole of K is used. A proper subset checks that the
    trajectory construction from K reproduces the capacities of smaller sets.
    """
    target = eq.support if subset is None else np.atleast_2d(subset)
    cap = eq.capacity if subset is None else subset_capacity
    keys = {tuple(p) for p in target.tolist()}
    vacant = 0
    for _ in range(trials):
        sample = sample_interlacement_trace(kernel, eq, u, rng)
        if not keys & sample.trace():
            vacant += 1
    freq = vacant / trials
    pred = math.exp(-u * cap)
    se = math.sqrt(max(pred * (1 - pred), 1.0 / trials) / trials)
    return {"u": u, "frequency": freq, "prediction": pred, "stderr": se,
            "z_score": (freq - pred) / se if se > 0 else 0.0}


def save_measure(eq: EquilibriumMeasure, path: str | Path, meta: dict | None = None) -> None:
    lines = ["# tiltcouple equilibrium measure v1", f"# kind {eq.kind}", f"# method {eq.method}",
             f"# lower {eq.lower!r}", f"# upper {eq.upper!r}"]
    lines += [f"# {k} {v}" for k, v in (meta or {}).items()]
    lines += [" ".join(str(int(c)) for c in p) + f" {w!r}" for p, w in zip(eq.support, eq.weights.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_measure(path: str | Path) -> EquilibriumMeasure:
    meta, pts, ws = {}, [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split(maxsplit=1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            continue
        *xs, w = line.split()
        pts.append([int(c) for c in xs])
        ws.append(float(w))
    num = lambda s: None if s == "None" else float(s)  # noqa: E731
    return EquilibriumMeasure(np.asarray(pts, dtype=np.int64), np.asarray(ws), meta["method"],
                              num(meta["lower"]), num(meta["upper"]), meta.get("kind", "srw"))


def measure_cache_path(cache_dir, shape_key: str, N: int, K: np.ndarray, mode: str) -> Path:
    khash = hashlib.sha1(np.ascontiguousarray(K, dtype=np.int64).tobytes()).hexdigest()[:12]
    return Path(cache_dir) / f"capacity_{shape_key}_N{N}_{khash}_{mode}.txt"


def capacity_scaling_check(geometries) -> dict:
    """cap^Psi(B)/N^(d-2) and the uniformity ratio max/min of e~^Psi_B over dB, per geometry."""
    rows = []
    for g in geometries:
        psi = g.psi_walk
        tB = g.B.contains(psi.region.points)
        eq = tilted_equilibrium_measure(psi, tB, g.B_eps.radius, g.center)
        on_boundary = eq.weights[eq.weights > 0]
        rows.append({"N": g.N, "capacity": eq.capacity, "scaled": eq.capacity / g.N ** (g.d - 2),
                     "uniformity": float(on_boundary.max() / on_boundary.min()),
                     "lower": eq.lower, "upper": eq.upper})
    scaled = [r["scaled"] for r in rows]
    ratios = [b / a for a, b in zip(scaled, scaled[1:])]
    return {"rows": rows, "consecutive_ratios": ratios}


def _crossing(kernel: WalkKernel, starts: np.ndarray, target: np.ndarray, success: np.ndarray,
              samples: int, rng: np.random.Generator, exact: np.ndarray) -> dict:
    per, errs = [], []
    for s in starts:
        ends, _, reasons = hit_batch(kernel, np.full(samples, s), target, rng, from_zero=False)
        win = success[ends] if success is not None else reasons == ESCAPE
        if success is not None:
            win = win & (reasons != ESCAPE)
        p = float(win.mean())
        per.append(p)
        errs.append(math.sqrt(max(p * (1 - p), 1e-300) / samples))
    per, errs = np.array(per), np.array(errs)
    return {"mean": float(per.mean()), "stderr": float(math.sqrt((errs ** 2).sum()) / len(per)),
            "min": float(per.min()), "max": float(per.max()),
            "exact_mean": float(exact.mean()), "exact_min": float(exact.min()),
            "exact_max": float(exact.max())}


def crossing_estimates_check(geom, samples: int, rng: np.random.Generator,
                             max_starts: int = 16) -> dict:
    """Tilted crossing probabilities between dB, dB^eps and dDelta, by MC and by solve.

    Reports P_x(H-bar_B > H_dB^eps) for x in dB and P_y(H_B < H-bar_dB^eps)
    for y in dB^eps (both of order 1/N), and P_y(H-bar_B = oo) for y in
    dDelta (of order N^(gamma-1)), with their scaled values.
    """
    psi = geom.psi_walk
    reg = psi.region
    pts = reg.points
    tB = geom.B.contains(pts)
    shell = np.zeros(len(reg), dtype=bool)
    shell[reg.index_of(geom.B_eps.boundary())] = True
    N, gamma = geom.N, geom.gamma

    def pick(idx):
        if len(idx) <= max_starts:
            return np.arange(len(idx))
        return np.unique(np.linspace(0, len(idx) - 1, max_starts).round().astype(int))

    stop = tB | shell
    # From a point of dB: one step, then reach the shell before B.
    first_hit = dirichlet_solve(reg.neighbors, psi.weights, psi.outside_weight, stop,
                                shell[stop].astype(float))
    b_idx = reg.index_of(geom.B_boundary)
    nb = reg.neighbors[b_idx]
    inside = nb >= 0
    vals = np.where(inside, np.where(tB[np.where(inside, nb, 0)], 0.0,
                                     first_hit[np.where(inside, nb, 0)]), 0.0)
    out_exact = (psi.prob[b_idx] * vals).sum(axis=1)
    s_idx = np.flatnonzero(shell)
    back = dirichlet_solve(reg.neighbors, psi.weights, psi.outside_weight, stop,
                           tB[stop].astype(float))
    nb = reg.neighbors[s_idx]
    inside = nb >= 0
    safe = np.where(inside, nb, 0)
    vals = np.where(inside, np.where(shell[safe], 0.0, back[safe]), 0.0)
    in_exact = (psi.prob[s_idx] * vals).sum(axis=1)
    d_idx = reg.index_of(geom.delta_boundary)
    esc = truncated_escape(psi, tB)[d_idx]

    b_pick, s_pick, d_pick = pick(b_idx), pick(s_idx), pick(d_idx)
    outward = _crossing(psi, b_idx[b_pick], stop, shell, samples, rng, out_exact[b_pick])
    inward = _crossing(psi, s_idx[s_pick], stop, tB, samples, rng, in_exact[s_pick])
    escape = _crossing(psi, d_idx[d_pick], tB, None, samples, rng, esc[d_pick])
    return {
        "N": N, "gamma": gamma,
        "outward": outward, "inward": inward, "escape_from_delta": escape,
        "scaled": {"outward_N": outward["mean"] * N, "inward_N": inward["mean"] * N,
                   "escape_N^(1-gamma)": escape["mean"] * N ** (1 - gamma)},
    }
