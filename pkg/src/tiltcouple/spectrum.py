"""Killed simple random walk kernel on a lattice domain and its principal eigenpair.

The kernel P_N moves to each in-domain neighbour with probability 1/(2d) and
loses the remaining mass. Its principal eigenvector phi_N is stored in the
anchor normalisation phi_N(x_0^N) = 1 and extended by zero outside the domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .lattice import (BallRegion, GeometryError, LatticeDomain, Shape, anchor_point,
                      discretize, unit_steps)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class DisconnectedDomainError(GeometryError):
    pass


@dataclass(frozen=True)
class KilledKernel:
    domain: LatticeDomain
    matrix: sp.csr_matrix

    @property
    def d(self) -> int:
        return self.domain.d


def build_killed_kernel(domain: LatticeDomain) -> KilledKernel:
    n, d = len(domain), domain.d
    rows, slots = np.nonzero(domain.neighbors >= 0)
    cols = domain.neighbors[rows, slots]
    vals = np.full(len(rows), 1.0 / (2 * d))
    return KilledKernel(domain, sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


@dataclass(frozen=True)
class ScalarField:
    """One real value per domain point, implicitly zero outside the domain."""

    domain: LatticeDomain
    values: np.ndarray

    def at(self, coords) -> np.ndarray:
        idx = self.domain.index_of(coords)
        return np.where(idx >= 0, self.values[np.where(idx >= 0, idx, 0)], 0.0)


FieldLike = ScalarField | Callable[[np.ndarray], np.ndarray]


def _evaluate(field: FieldLike, coords: np.ndarray) -> np.ndarray:
    if isinstance(field, ScalarField):
        return field.at(coords)
    return np.asarray(field(np.atleast_2d(coords)), dtype=float)


def neighbour_mean(field: FieldLike, x) -> np.ndarray:
    """h-bar(x) = (1/2d) sum over unit steps e of h(x + e), for one or many x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    steps = unit_steps(x.shape[1])
    total = sum(_evaluate(field, x + e) for e in steps)
    return total / len(steps)


def discrete_laplacian(field: FieldLike, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    return neighbour_mean(field, x) - _evaluate(field, x)


@dataclass(frozen=True)
class EigenPair:
    domain: LatticeDomain = field(repr=False)
    lam: float
    phi: np.ndarray = field(repr=False)
    anchor: tuple[int, ...]
    residual: float
    iterations: int = 0
    shape_key: str = ""

    @property
    def N(self) -> int:
        return self.domain.N

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def field(self) -> ScalarField:
        return ScalarField(self.domain, self.phi)

    def phi_at(self, coords) -> np.ndarray:
        return self.field.at(coords)

    def l2_normalized(self) -> np.ndarray:
        return self.phi / np.linalg.norm(self.phi)


def _start_vector(domain: LatticeDomain) -> np.ndarray:
    ext = domain.exterior_boundary
    dist, _ = cKDTree(ext).query(domain.points)
    return dist.astype(float)


def principal_eigenpair(kernel: KilledKernel, tol: float = 1e-12, max_iters: int = 400_000,
                        anchor=None, check_every: int = 10) -> EigenPair:
    """Principal eigenpair of the killed kernel by power iteration.

    The lattice is bipartite, so -lambda is also an eigenvalue of P_N; the
    iteration runs on the lazy kernel (I + P_N)/2, which has the same
    eigenvectors and a simple dominant eigenvalue. Iteration stops when the
    sup-norm residual |P_N phi - lambda phi| in the anchor normalisation is at
    most `tol`, lambda being the Rayleigh quotient.
    """
    domain = kernel.domain
    if not domain.is_connected():
        raise DisconnectedDomainError("domain is not nearest-neighbour connected")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if anchor is None:
        anchor_idx = int(np.argmax(_start_vector(domain)))
    else:
        anchor_idx = int(domain.index_of(np.asarray(anchor))[0])
        if anchor_idx < 0:
            raise GeometryError("anchor point lies outside the domain")
    P = kernel.matrix
    v = _start_vector(domain)
    v /= np.linalg.norm(v)
    residual = math.inf
    lam = 0.0
    for it in range(1, max_iters + 1):
        w = P @ v
        if it % check_every == 0 or it == 1:
            lam = float(v @ w)
            residual = float(np.abs(w - lam * v).max() / abs(v[anchor_idx]))
            if residual <= tol:
                phi = v / v[anchor_idx]
                return EigenPair(domain, lam, phi, tuple(int(c) for c in domain.points[anchor_idx]),
                                 residual, it)
        v = 0.5 * (v + w)
        v /= np.linalg.norm(v)
    raise ConvergenceError(f"power iteration did not reach {tol:g} in {max_iters} iterations",
                           residual)


def eigenpair_for(shape: Shape, N: int, tol: float = 1e-12, max_iters: int = 400_000,
                  cache_dir: str | Path | None = None) -> EigenPair:
    """Discretise `shape`, solve, and optionally cache the pair on disk."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"eigen_{shape.key()}_N{N}_tol{tol:g}.txt"
        if path.exists():
            return load_eigenpair(path)
    domain = discretize(shape, N)
    pair = principal_eigenpair(build_killed_kernel(domain), tol=tol, max_iters=max_iters,
                               anchor=anchor_point(shape, N))
    pair = EigenPair(pair.domain, pair.lam, pair.phi, pair.anchor, pair.residual,
                     pair.iterations, shape.key())
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_eigenpair(pair, path)
    return pair


def save_eigenpair(pair: EigenPair, path: str | Path) -> None:
    """Text export: '#'-prefixed metadata header, then one 'x y z value' line per point."""
    lines = [
        "# tiltcouple eigenpair v1",
        f"# N {pair.N}",
        f"# d {pair.d}",
        f"# lambda {pair.lam!r}",
        f"# residual {pair.residual!r}",
        f"# iterations {pair.iterations}",
        "# anchor " + " ".join(str(c) for c in pair.anchor),
        f"# shape {pair.shape_key}",
    ]
    body = [" ".join(str(int(c)) for c in p) + f" {v!r}"
            for p, v in zip(pair.domain.points, pair.phi.tolist())]
    Path(path).write_text("\n".join(lines + body) + "\n")


def load_eigenpair(path: str | Path) -> EigenPair:
    meta: dict[str, str] = {}
    coords, values = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split(maxsplit=1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
            continue
        *xs, val = line.split()
        coords.append([int(c) for c in xs])
        values.append(float(val))
    domain = LatticeDomain(np.asarray(coords), N=int(meta["N"]))
    order = domain.index_of(np.asarray(coords))
    phi = np.empty(len(values))
    phi[order] = values
    return EigenPair(domain, float(meta["lambda"]), phi,
                     tuple(int(c) for c in meta["anchor"].split()), float(meta["residual"]),
                     int(meta.get("iterations", 0)), meta.get("shape", ""))


def second_eigenvalue_estimate(pair: EigenPair, iterations: int = 3000) -> float:
    """Rayleigh-quotient estimate of the second eigenvalue (deflated lazy power iteration).

    A Rayleigh quotient on the orthogonal complement of phi never exceeds the
    true second eigenvalue, so the reported gap is an upper estimate.
    """
    P = build_killed_kernel(pair.domain).matrix
    u = pair.l2_normalized()
    rng = np.random.default_rng(0)
    v = rng.standard_normal(len(u))
    for _ in range(iterations):
        v -= (v @ u) * u
        v /= np.linalg.norm(v)
        v = 0.5 * (v + P @ v)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    return float(v @ (P @ v))


def verify_dirichlet_problem(pair: EigenPair) -> dict:
    """Defects of the Dirichlet eigen-equation and of phi-bar = lambda phi on D_N.

    With Delta_d h = h-bar - h the eigen-equation reads -Delta_d phi = (1 - lambda) phi.
    """
    pts = pair.domain.points
    lap = discrete_laplacian(pair.field, pts)
    mean = neighbour_mean(pair.field, pts)
    scale = float(pair.phi.max())
    laplace_defect = float(np.abs(-lap - (1 - pair.lam) * pair.phi).max())
    mean_defect = float(np.abs(mean - pair.lam * pair.phi).max())
    outside = pair.phi_at(pair.domain.exterior_boundary)
    return {
        "laplacian_defect": laplace_defect,
        "mean_defect": mean_defect,
        "relative_defect": max(laplace_defect, mean_defect) / scale,
        "boundary_max": float(np.abs(outside).max()),
        "phi_positive": bool((pair.phi > 0).all()),
        "max_phi": scale,
    }


def scaled_gap(pair: EigenPair) -> float:
    return 2 * pair.d * pair.N ** 2 * (1 - pair.lam)


def richardson_limit(Ns, values) -> tuple[float, np.ndarray]:
    """Least-squares fit of values ~ L + a/N (+ b/N^2 with three or more points)."""
    Ns = np.asarray(Ns, dtype=float)
    values = np.asarray(values, dtype=float)
    order = 2 if len(Ns) >= 3 else 1
    X = np.vander(1.0 / Ns, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(X, values, rcond=None)
    return float(coef[0]), coef


def eigen_asymptotic_check(shape: Shape, N_list, tol: float = 1e-12, pairs=None,
                           cache_dir=None) -> dict:
    """Table of 2dN^2(1 - lambda_N), its extrapolated limit and the constant c_0.

    c_0 is the smallest constant with lambda_N^(-T) <= exp(c_0 T / N^2) for all
    listed N, that is max_N N^2 log(1/lambda_N).
    """
    N_list = sorted(int(n) for n in N_list)
    if len(N_list) < 2:
        raise ValueError("need at least two values of N")
    if pairs is None:
        pairs = {N: eigenpair_for(shape, N, tol=tol, cache_dir=cache_dir) for N in N_list}
    gaps = [scaled_gap(pairs[N]) for N in N_list]
    limit, coef = richardson_limit(N_list, gaps)
    c0 = max(N ** 2 * -math.log(pairs[N].lam) for N in N_list)
    return {
        "N": N_list,
        "scaled_gap": gaps,
        "lambda": [pairs[N].lam for N in N_list],
        "limit": limit,
        "fit": coef.tolist(),
        "c0": c0,
    }


def lambda_power_bracket(pair: EigenPair, c0: float, T: int) -> tuple[float, float, bool]:
    """(lambda^-T, exp(c_0 T / N^2), whether 1 <= first <= second)."""
    lhs = pair.lam ** (-T)
    rhs = math.exp(c0 * T / pair.N ** 2)
    return lhs, rhs, bool(1 <= lhs <= rhs * (1 + 1e-12))


def phi_ratio_bounds(pair: EigenPair, region: np.ndarray) -> tuple[float, float]:
    """(min, max) of phi(x)/phi(y) over x, y in the region."""
    idx = pair.domain.index_of(np.atleast_2d(region))
    if len(idx) == 0:
        raise ValueError("empty region")
    if np.any(idx < 0):
        raise GeometryError("region leaves the domain, where phi vanishes")
    vals = pair.phi[idx]
    if np.any(vals <= 0):
        raise GeometryError("region touches zero values of phi")
    return float(vals.min() / vals.max()), float(vals.max() / vals.min())


def phi_norms(pair: EigenPair) -> tuple[float, float]:
    return float(pair.phi.sum()), float((pair.phi ** 2).sum())


def eigenvalue_domain_comparison(domain: LatticeDomain, ball: BallRegion | None,
                                 tol: float = 1e-12) -> tuple[float, float]:
    """(lambda(D_N), lambda(D_N minus ball)); the removal must strictly lower it."""
    full = principal_eigenpair(build_killed_kernel(domain), tol=tol)
    if ball is None:
        return full.lam, full.lam
    keep = ~ball.contains(domain.points)
    if keep.all():
        return full.lam, full.lam
    rest = domain.subdomain(keep)
    if not rest.is_connected():
        raise DisconnectedDomainError("domain minus the ball is disconnected")
    reduced = principal_eigenpair(build_killed_kernel(rest), tol=tol)
    if not reduced.lam < full.lam:
        raise AssertionError("removing a ball did not lower the principal eigenvalue")
    return full.lam, reduced.lam


def survival_probability_check(pair: EigenPair, x, t: int, samples: int,
                               rng: np.random.Generator) -> dict:
    """Survival P_x(tau > t) of the killed walk against phi(x) lambda^t |phi|_1/|phi|_2^2.

    Two estimators are reported: plain Monte Carlo of the killed walk, and an
    importance estimator phi(x) lambda^t E^N_x[1/phi(X_t)] under the tilted
    walk, which is unbiased for the same quantity and stays informative when
    survival is far too rare for plain sampling.
    """
    from .walks import phi_kernel, srw_kernel_on, run_fixed_steps

    N = pair.N
    in_regime = t >= 10 * N ** 2 * math.log(max(N, 2))
    idx = int(pair.domain.index_of(np.atleast_2d(x))[0])
    if idx < 0:
        raise GeometryError("start point outside the domain")
    l1, l2 = phi_norms(pair)
    prediction = float(pair.phi[idx] * pair.lam ** t * l1 / l2)

    killed = srw_kernel_on(pair.domain)
    ends, alive = run_fixed_steps(killed, np.full(samples, idx), t, rng)
    plain = float(alive.mean())
    plain_se = float(np.sqrt(max(plain * (1 - plain), 1.0 / samples) / samples))

    tilted = phi_kernel(pair)
    ends, _ = run_fixed_steps(tilted, np.full(samples, idx), t, rng)
    weights = pair.phi[idx] * pair.lam ** t / pair.phi[ends]
    importance = float(weights.mean())
    importance_se = float(weights.std(ddof=1) / np.sqrt(samples)) if samples > 1 else math.inf
    return {
        "t": t,
        "in_regime": bool(in_regime),
        "prediction": prediction,
        "plain_mc": plain,
        "plain_se": plain_se,
        "plain_upper_bound_only": bool(alive.sum() == 0),
        "importance_mc": importance,
        "importance_se": importance_se,
    }
