"""Simple random walk estimates behind the comparison of tilted and plain walks.

Every check has an exact route (linear solve or matrix powers of the killed
kernel) next to its Monte Carlo estimate, so measured values carry either a
standard error or an exact reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .harmonic import dirichlet_solve
from .lattice import GeometryError, LatticeDomain, ball_region
from .spectrum import EigenPair, build_killed_kernel, phi_ratio_bounds, principal_eigenpair
from .walks import WalkKernel, hit_batch, kernel_from_weights, srw_kernel_on

DEFAULT_K_MAX = 20


@dataclass(frozen=True)
class EstimateReport:
    name: str
    parameters: dict
    measured: dict
    predicted: dict
    scaled: dict = field(default_factory=dict)
    passed: bool | None = None

    def as_dict(self) -> dict:
        return {"name": self.name, "parameters": self.parameters, "measured": self.measured,
                "predicted": self.predicted, "scaled": self.scaled, "passed": self.passed}


def _region(points: np.ndarray, N: int) -> LatticeDomain:
    return LatticeDomain(points, N=N)


def transition_matrix(kernel: WalkKernel) -> sp.csr_matrix:
    """Sub-stochastic matrix of the kernel restricted to its region."""
    nb = kernel.neighbors
    rows, slots = np.nonzero(nb >= 0)
    n = len(kernel.region)
    return sp.csr_matrix((kernel.prob[rows, slots], (rows, nb[rows, slots])), shape=(n, n))


def _distance(points: np.ndarray, center) -> np.ndarray:
    return np.sqrt(((points - np.asarray(center)) ** 2).sum(axis=1))


# ---------------------------------------------------------------- gambler's ruin

def ruin_formula(r: np.ndarray, inner: float, outer: float, d: int) -> np.ndarray:
    """Continuum P(reach radius `inner` before `outer`) from radius r."""
    a = 2 - d
    return (r ** a - outer ** a) / (inner ** a - outer ** a)


def gambler_ruin_check(N: int, alpha: float, eps: float, iota: float = 0.5, jota: float = 0.5,
                       eta: float = 0.5, d: int = 3) -> EstimateReport:
    """Solve P_z(H_dB^eps < H_B) and P_w(H_B < H_dB^eps) and compare with the radial formula.

    Start points z sit at distance [eta, 1/eta] N^iota outside B and w at the
    same profile N^jota inside B^eps. The deviation is the larger of the two
    profile-averaged relative errors; pointwise maxima are reported too.
    """
    center = (0,) * d
    B = ball_region(center, alpha * N)
    B_eps = ball_region(center, (alpha + eps) * N)
    pts = B_eps.points()
    region = _region(pts, N)
    kernel = srw_kernel_on(region)
    in_B = B.contains(region.points)
    shell = np.zeros(len(region), dtype=bool)
    shell[region.index_of(B_eps.boundary())] = True
    fixed = in_B | shell
    values = in_B[fixed].astype(float)
    h = dirichlet_solve(region.neighbors, kernel.weights, 0.0, fixed, values)
    r = _distance(region.points, center)
    inner, outer = alpha * N, (alpha + eps) * N
    free = ~fixed
    near = free & (r - inner >= eta * N ** iota) & (r - inner <= N ** iota / eta)
    far = free & (outer - r >= eta * N ** jota) & (outer - r <= N ** jota / eta)
    if not near.any() or not far.any():
        raise GeometryError("no lattice points match the requested distance profiles")
    f = ruin_formula(np.maximum(r, 0.5), inner, outer, d)
    dev_z = np.abs((1 - h[near]) - (1 - f[near])) / (1 - f[near])
    dev_w = np.abs(h[far] - f[far]) / f[far]
    deviation = float(max(dev_z.mean(), dev_w.mean()))
    return EstimateReport(
        "gambler_ruin",
        {"N": N, "alpha": alpha, "eps": eps, "iota": iota, "jota": jota, "eta": eta, "d": d},
        {"escape_outward": float((1 - h[near]).mean()), "reach_inward": float(h[far].mean()),
         "deviation_outward": float(dev_z.mean()), "deviation_inward": float(dev_w.mean()),
         "max_deviation_outward": float(dev_z.max()), "max_deviation_inward": float(dev_w.max()),
         "deviation": deviation, "points": int(near.sum() + far.sum())},
        {"escape_outward": float((1 - f[near]).mean()), "reach_inward": float(f[far].mean())},
        {"escape_outward_N^(1-iota)": float((1 - h[near]).mean() * N ** (1 - iota)),
         "reach_inward_N^(1-jota)": float(h[far].mean() * N ** (1 - jota))})


# ---------------------------------------------------------------- exit-time tail

def _annulus_killing(N: int, alpha: float, delta: float, d: int):
    """SRW region B^delta with B and dB^delta as stopping sets."""
    center = (0,) * d
    B = ball_region(center, alpha * N)
    B_delta = ball_region(center, (alpha + delta) * N)
    region = _region(B_delta.points(), N)
    kernel = srw_kernel_on(region)
    in_B = B.contains(region.points)
    shell = np.zeros(len(region), dtype=bool)
    shell[region.index_of(B_delta.boundary())] = True
    return region, kernel, in_B, shell


def exact_survival(kernel: WalkKernel, alive: np.ndarray, starts: np.ndarray, steps: int,
                   first_step_mask: np.ndarray | None = None) -> np.ndarray:
    """P_z(X_1..X_steps all in `alive`) for each start z, by matrix powers.

    `first_step_mask` optionally replaces `alive` for X_1 only.
    """
    P = transition_matrix(kernel)
    v = alive.astype(float)
    for _ in range(max(steps - 1, 0)):
        v = alive * (P @ v)
    if steps == 0:
        return np.ones(len(starts))
    first = alive if first_step_mask is None else first_step_mask
    v = first * v
    return (P @ v)[starts]


def exit_time_tail_check(N: int, alpha: float, delta: float, samples: int,
                         rng: np.random.Generator, d: int = 3, start: str = "boundary",
                         gamma: float | None = None, eta: float = 0.5) -> EstimateReport:
    """sup_z P_z(H-bar_B and H_dB^delta both later than (delta N)^2).

    `start="boundary"` uses z in dB and scales by N; `start="far"` uses z at
    distance [eta, 1/eta] N^gamma from B and scales by N^(1 - gamma).
    """
    region, kernel, in_B, shell = _annulus_killing(N, alpha, delta, d)
    T = int(math.floor((delta * N) ** 2))
    r = _distance(region.points, (0,) * d)
    if start == "boundary":
        starts = region.index_of(ball_region((0,) * d, alpha * N).boundary())
        scale = N
    elif start == "far":
        if gamma is None:
            raise ValueError("the far start needs gamma")
        off = r - alpha * N
        cand = np.flatnonzero(~in_B & ~shell & (off >= eta * N ** gamma) & (off <= N ** gamma / eta))
        if len(cand) == 0:
            raise GeometryError("no start points at the requested distance from B")
        starts = cand
        scale = N ** (1 - gamma)
    else:
        raise ValueError(f"unknown start {start!r}")
    alive = ~in_B & ~shell
    if T == 0:
        exact = np.ones(len(starts))
    else:
        exact = exact_survival(kernel, alive, starts, T)
    worst = int(starts[np.argmax(exact)])
    if T == 0:
        p_mc, se = 1.0, 0.0
    else:
        _, times, reasons = hit_batch(kernel, np.full(samples, worst), in_B | shell, rng,
                                      from_zero=False)
        survived = times > T
        p_mc = float(survived.mean())
        se = math.sqrt(max(p_mc * (1 - p_mc), 1e-300) / samples)
    return EstimateReport(
        "exit_time_tail", {"N": N, "alpha": alpha, "delta": delta, "start": start, "T": T,
                           "samples": samples, "gamma": gamma},
        {"probability": p_mc, "stderr": se, "exact": float(exact.max())},
        {"order": f"1/N^{1 if start == 'boundary' else 1 - gamma:.3g}"},
        {"scaled": p_mc * scale, "scaled_exact": float(exact.max()) * scale},
        passed=bool(abs(p_mc - exact.max()) <= 3 * se + 1e-12))


# ---------------------------------------------------------------- confinement decay

@dataclass(frozen=True)
class DecayFit:
    kind: str
    size: float
    T: np.ndarray = field(repr=False)
    survival: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    exact: np.ndarray = field(repr=False)
    rate: float = 0.0
    rate_error: float = 0.0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "size": self.size, "T": self.T.tolist(),
                "survival": self.survival.tolist(), "stderr": self.stderr.tolist(),
                "exact": self.exact.tolist(), "rate": self.rate, "rate_error": self.rate_error}


def _confinement_region(kind: str, size: float, d: int, inner: float | None):
    center = (0,) * d
    if kind == "ball":
        pts = ball_region(center, size).points()
        start_pt = np.array(center)
        width = size
    elif kind == "annulus":
        if inner is None:
            raise ValueError("an annulus needs an inner radius")
        outer = ball_region(center, inner + size).points()
        keep = ~ball_region(center, inner).contains(outer)
        pts = outer[keep]
        mid = inner + size / 2
        start_pt = np.array([int(round(mid))] + [0] * (d - 1))
        width = size
    else:
        raise ValueError(f"unknown region kind {kind!r}")
    region = _region(pts, 1)
    return region, int(region.index_of(start_pt[None])[0]), width


def confinement_decay_check(kind: str, size: float, T_list, samples: int,
                            rng: np.random.Generator, d: int = 3,
                            inner: float | None = None) -> DecayFit:
    """Fit log P(S_[0,T] stays in the region) against T/size^2.

    MC survival is checked against the exact matrix-power survival; the rate
    is the least-squares slope of log MC survival.
    """
    region, start, width = _confinement_region(kind, size, d, inner)
    kernel = srw_kernel_on(region)
    T_arr = np.asarray(sorted(int(t) for t in T_list))
    alive = np.ones(len(region), dtype=bool)
    exact = np.array([exact_survival(kernel, alive, np.array([start]), int(t))[0] for t in T_arr])
    steps_out = np.zeros(len(region), dtype=bool)
    # Survival to T means the exit time exceeds T; leaving the region is the escape reason.
    _, times, reasons = hit_batch(kernel, np.full(samples, start), steps_out, rng, from_zero=False,
                                  budget=int(T_arr.max()) + 1)
    exit_time = np.where(reasons == 1, times, np.iinfo(np.int64).max)
    surv = np.array([(exit_time > t).mean() for t in T_arr])
    se = np.sqrt(np.maximum(surv * (1 - surv), 1e-300) / samples)
    use = (T_arr > 0) & (surv > 0)
    if use.sum() < 2:
        raise ValueError("survival vanished at every positive T; use smaller T values")
    x = T_arr[use] / width ** 2
    y = np.log(surv[use])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    cov = np.linalg.pinv(A.T @ A) * float(resid @ resid) / dof
    return DecayFit(kind, float(width), T_arr, surv, se, exact, float(-coef[0]),
                    float(math.sqrt(max(cov[0, 0], 0.0))))


def ball_spectral_survival(size: float, T: int, d: int = 3) -> dict:
    """Exact survival from the center against lambda(ball)^T with its spectral prefactor."""
    region = _region(ball_region((0,) * d, size).points(), 1)
    start = int(region.index_of(np.zeros((1, d), dtype=np.int64))[0])
    pair = principal_eigenpair(build_killed_kernel(region), tol=1e-12)
    phi = pair.phi
    prefactor = float(phi[start] * phi.sum() / (phi ** 2).sum())
    exact = exact_survival(srw_kernel_on(region), np.ones(len(region), dtype=bool),
                           np.array([start]), T)[0]
    return {"lambda": pair.lam, "lambda_power": pair.lam ** T,
            "spectral": prefactor * pair.lam ** T, "exact": float(exact)}


# ---------------------------------------------------------------- probability bracket

@dataclass(frozen=True)
class BracketReport:
    tilted: float
    tilted_se: float
    tilted_exact: float
    plain: float
    plain_se: float
    lower: float
    upper: float
    remainder: float
    kappa: float
    c0: float
    terms: np.ndarray = field(repr=False)
    holds: bool = False
    flagged: bool = False

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "terms"}
        d["terms"] = self.terms.tolist()
        return d


def probability_bracket_check(pair: EigenPair, inner: float, outer: float, start, samples: int,
                              rng: np.random.Generator, k_max: int = DEFAULT_K_MAX,
                              constant_tilt: bool = False, kappa_region=None) -> BracketReport:
    """Bracket of P^N_x(A) by P_x(A) for A = {exit the annulus C through its outer side}.

    C = {inner < |y - x_0| < outer}. Both probabilities are estimated by Monte
    Carlo; the tilted one is also solved exactly. The tail sum uses the
    plain-walk joint law of (A, tau_C) in blocks of N^2 steps up to k_max,
    and the remainder beyond k_max is bounded by extrapolating the block
    decay geometrically. `constant_tilt` replaces phi by a constant.
    """
    dom = pair.domain
    N = pair.N
    center = pair.anchor
    r = _distance(dom.points, center)
    C = (r > inner) & (r < outer)
    if not C.any():
        raise GeometryError("the annulus C is empty")
    outside = r >= outer
    x = int(dom.index_of(np.atleast_2d(start))[0])
    if x < 0 or not C[x]:
        raise GeometryError("the start point must lie in C")
    weights = np.ones(len(dom)) if constant_tilt else pair.phi
    tilted_kernel = kernel_from_weights(dom, weights, 0.0, kind="phi")
    plain_kernel = srw_kernel_on(dom)
    stop = ~C
    # Exact tilted probability: harmonic with value 1 on outward exits.
    h = dirichlet_solve(dom.neighbors, weights, 0.0, stop, outside[stop].astype(float))
    tilted_exact = float(h[x])

    ends, _, _ = hit_batch(tilted_kernel, np.full(samples, x), stop, rng)
    hit_out = outside[ends]
    tilted = float(hit_out.mean())
    tilted_se = math.sqrt(max(tilted * (1 - tilted), 1e-300) / samples)

    ends, times, _ = hit_batch(plain_kernel, np.full(samples, x), stop, rng)
    A = outside[ends]
    plain = float(A.mean())
    plain_se = math.sqrt(max(plain * (1 - plain), 1e-300) / samples)

    if constant_tilt:
        kappa, c0 = 1.0, 0.0
    else:
        region = kappa_region if kappa_region is not None else dom.points[r <= outer + 1]
        kappa = phi_ratio_bounds(pair, region)[0]
        c0 = N ** 2 * -math.log(pair.lam)
    block = times // N ** 2
    terms = np.array([((block == k) & A).mean() for k in range(1, k_max + 1)])
    weights_k = np.exp(c0 * (np.arange(1, k_max + 1) + 1))
    head = math.exp(c0) * plain + float((weights_k * terms).sum())
    # Remainder: blocks beyond k_max, bounded with the observed block decay ratio.
    beyond = float(((block > k_max) & A).mean())
    positive = np.flatnonzero(terms > 0)
    ratio = terms[positive[-1]] / terms[positive[-2]] if len(positive) >= 2 else 0.5
    ratio = min(ratio * math.exp(c0), 0.99)
    tail_bound = math.exp(c0 * (k_max + 2)) * (beyond + (terms[-1] if len(terms) else 0.0))
    remainder = tail_bound / (1 - ratio)
    upper = (head + remainder) / kappa
    lower = kappa * plain
    slack = 3 * math.hypot(tilted_se, plain_se)
    holds = bool(lower - slack <= tilted <= upper + slack)
    flagged = bool(remainder > 0.1 * upper * kappa)
    return BracketReport(tilted, tilted_se, tilted_exact, plain, plain_se, lower, upper, remainder,
                         kappa, c0, terms, holds, flagged)
