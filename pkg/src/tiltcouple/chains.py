"""Excursion chains of the tilted walk (Y) and of tilted interlacements (Z).

Both chains live on Sigma = dB x dDelta: a state (x, y) records where an
excursion enters B and where it next reaches the far region Delta. All
transition laws are tabulated exactly by Dirichlet solves; sampling can either
read the tables or run the underlying walks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CouplingGeometry
from .harmonic import dirichlet_solve, one_step_average
from .measures import chi_square_pvalue
from .potential import EquilibriumMeasure, tilted_equilibrium_measure
from .walks import ESCAPE, _count_returns, _excursion_counts, hit_batch, stationary_start


class SupportError(RuntimeError):
    """A required law has no mass where it must have some."""


class CouplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainTables:
    """Exact transition data for the Y and Z chains on one geometry.

    Row/column orders: `entry_idx` lists dB and `exit_idx` lists dDelta as
    D_N indices; states are flattened as x * n_exit + y.
    """

    geom: CouplingGeometry = field(repr=False)
    entry_idx: np.ndarray = field(repr=False)
    exit_idx: np.ndarray = field(repr=False)
    exit_law: np.ndarray = field(repr=False)      # D_N x dDelta: P^N_z(X_{H_Delta} = y)
    return_law: np.ndarray = field(repr=False)    # D_N x dB: P^N_z(X_{H_B} = x)
    psi_return: np.ndarray = field(repr=False)    # dDelta x dB: P^Psi_w(X_{H_B} = x, H_B < oo)
    psi_escape: np.ndarray = field(repr=False)    # dDelta: P^Psi_w(H_B = oo)
    psi_eq: EquilibriumMeasure = field(repr=False)
    phi_eq: np.ndarray = field(repr=False)        # dB: phi^2(x) P^N_x(H_Delta < H-bar_B)
    entry_Y: np.ndarray = field(repr=False)       # dB: law of X_{R_1} under the stationary start
    G_idx: np.ndarray = field(repr=False)
    G_hit: np.ndarray = field(repr=False)         # dB x dG: P_x(X_{H_G} = u, H_G < H_Delta)
    mu_floor: float = 0.0
    floored_cells: int = 0

    @property
    def n_entry(self) -> int:
        return len(self.entry_idx)

    @property
    def n_exit(self) -> int:
        return len(self.exit_idx)

    @property
    def n_states(self) -> int:
        return self.n_entry * self.n_exit

    @property
    def mu(self) -> np.ndarray:
        """Exit law from dB: mu(x, y) = P^N_x(X_{H_Delta} = y)."""
        return self.exit_law[self.entry_idx]

    @property
    def return_from_exit(self) -> np.ndarray:
        """dDelta x dB return law of the phi-walk."""
        return self.return_law[self.exit_idx]

    @property
    def cap_phi(self) -> float:
        return float(self.phi_eq.sum())

    @property
    def cap_psi(self) -> float:
        return self.psi_eq.capacity

    @property
    def psi_eq_normalized(self) -> np.ndarray:
        return self.psi_eq.weights / self.psi_eq.weights.sum()

    @property
    def phi_eq_normalized(self) -> np.ndarray:
        return self.phi_eq / self.phi_eq.sum()

    @property
    def exit_marginal(self) -> np.ndarray:
        """dDelta marginal of the invariant law: sum_x e~(x) mu(x, y)."""
        return self.phi_eq_normalized @ self.mu

    def state(self, x: int, y: int) -> int:
        return int(x) * self.n_exit + int(y)

    def split(self, s) -> tuple:
        return np.divmod(s, self.n_exit)

    def state_points(self, s: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        x, y = self.split(int(s))
        pts = self.geom.domain.points
        return tuple(pts[self.entry_idx[x]].tolist()), tuple(pts[self.exit_idx[y]].tolist())


def build_tables(geom: CouplingGeometry, mu_floor: float = 0.0) -> ChainTables:
    """Solve for every exact law the chains need."""
    dom = geom.domain
    kern = geom.phi_walk
    B_mask = geom.B_mask
    D_mask = geom.delta.mask
    entry_idx = dom.index_of(geom.B_boundary)
    exit_idx = np.flatnonzero(geom.delta.boundary_mask)
    n_exit = len(exit_idx)

    # Exit law to dDelta; interior points of Delta are never hit first.
    exit_cols = np.zeros((int(D_mask.sum()), n_exit))
    pos_in_D = np.searchsorted(np.flatnonzero(D_mask), exit_idx)
    exit_cols[pos_in_D, np.arange(n_exit)] = 1.0
    exit_law = dirichlet_solve(dom.neighbors, kern.weights, 0.0, D_mask, exit_cols)

    ret_cols = np.zeros((int(B_mask.sum()), len(entry_idx)))
    pos_in_B = np.searchsorted(np.flatnonzero(B_mask), entry_idx)
    ret_cols[pos_in_B, np.arange(len(entry_idx))] = 1.0
    return_law = dirichlet_solve(dom.neighbors, kern.weights, 0.0, B_mask, ret_cols)

    # e^phi_Delta(x) = phi^2(x) P_x(H_Delta < H-bar_B): one step then solve with B = 0, Delta = 1.
    fixed = B_mask | D_mask
    reach = dirichlet_solve(dom.neighbors, kern.weights, 0.0, fixed,
                            D_mask[fixed].astype(float))
    step_vals = np.where(B_mask, 0.0, reach)
    first = one_step_average(dom.neighbors, kern.prob, step_vals, entry_idx)
    phi_eq = geom.pair.phi[entry_idx] ** 2 * first

    # Psi-walk returns from dDelta, on the truncation ball.
    psi = geom.psi_walk
    treg = psi.region
    tB = geom.B.contains(treg.points)
    t_entry = treg.index_of(geom.B_boundary)
    t_exit = treg.index_of(dom.points[exit_idx])
    cols = np.zeros((int(tB.sum()), len(entry_idx) + 1))
    cols[np.searchsorted(np.flatnonzero(tB), t_entry), np.arange(len(entry_idx))] = 1.0
    esc_vals = np.zeros(len(entry_idx) + 1)
    esc_vals[-1] = 1.0
    sol = dirichlet_solve(treg.neighbors, psi.weights, psi.outside_weight, tB, cols,
                          escape_values=esc_vals)
    psi_return = sol[t_exit, :-1]
    psi_escape = sol[t_exit, -1]
    psi_eq = tilted_equilibrium_measure(psi, tB, geom.B_eps.radius, geom.center)
    # The measure is carried by all of B; keep its values on dB in the order used here.
    eq_pos = np.searchsorted(np.flatnonzero(tB), t_entry)
    psi_eq = EquilibriumMeasure(geom.B_boundary, psi_eq.weights[eq_pos], psi_eq.method,
                                psi_eq.lower, psi_eq.upper, kind="psi")

    # Entrance law of the stationary walk: X_{R_1} with X_0 ~ phi^2.
    phi2 = geom.pair.phi ** 2
    norm2 = float(phi2.sum())
    via_exit = exit_law[~D_mask] @ return_law[exit_idx]
    entry_Y = (phi2[D_mask] @ return_law[D_mask] + phi2[~D_mask] @ via_exit) / norm2

    G_mask = geom.G.contains(dom.points)
    G_idx = dom.index_of(geom.G.boundary())
    stop = G_mask | D_mask
    g_cols = np.zeros((int(stop.sum()), len(G_idx)))
    g_cols[np.searchsorted(np.flatnonzero(stop), G_idx), np.arange(len(G_idx))] = 1.0
    G_hit = dirichlet_solve(dom.neighbors, kern.weights, 0.0, stop, g_cols)[entry_idx]

    floored = 0
    if mu_floor > 0:
        mu = exit_law[entry_idx]
        low = mu < mu_floor
        floored = int(low.sum())
        if floored:
            mu = np.where(low, mu_floor, mu)
            exit_law = exit_law.copy()
            exit_law[entry_idx] = mu / mu.sum(axis=1, keepdims=True)
    return ChainTables(geom, entry_idx, exit_idx, exit_law, return_law, psi_return, psi_escape,
                       psi_eq, phi_eq, entry_Y, G_idx, G_hit, mu_floor, floored)


# ---------------------------------------------------------------- distributions

def start_distributions(tables: ChainTables) -> dict[str, np.ndarray]:
    """Initial laws nu_Y and nu_Z and the invariant law pi~, all over flattened states."""
    mu = tables.mu
    return {
        "Y": (tables.entry_Y[:, None] * mu).ravel(),
        "Z": (tables.psi_eq_normalized[:, None] * mu).ravel(),
        "pi": (tables.phi_eq_normalized[:, None] * mu).ravel(),
    }


def invariant_measure(tables: ChainTables) -> np.ndarray:
    return start_distributions(tables)["pi"]


def entry_law_Y(tables: ChainTables, y: int) -> np.ndarray:
    return tables.return_from_exit[y]


def entry_law_Z(tables: ChainTables, y: int) -> np.ndarray:
    return tables.psi_return[y] + tables.psi_escape[y] * tables.psi_eq_normalized


def transition_row(tables: ChainTables, s: int, chain: str) -> np.ndarray:
    """Exact row p(s, .) over flattened states."""
    _, y = tables.split(int(s))
    entry = entry_law_Y(tables, y) if chain == "Y" else entry_law_Z(tables, y)
    return (entry[:, None] * tables.mu).ravel()


def dense_kernel(tables: ChainTables, chain: str) -> np.ndarray:
    """Full transition matrix; only sensible for small geometries."""
    mu = tables.mu
    if chain == "Y":
        entry = tables.return_from_exit
    else:
        entry = tables.psi_return + tables.psi_escape[:, None] * tables.psi_eq_normalized[None, :]
    by_exit = (entry[:, :, None] * mu[None, :, :]).reshape(tables.n_exit, -1)
    return np.tile(by_exit, (tables.n_entry, 1))


@dataclass(frozen=True)
class InvarianceReport:
    residual_Y: float
    residual_Z: float
    exit_mass_defect: float
    row_sum_defect_Y: float
    row_sum_defect_Z: float
    dense_residual_Y: float | None = None
    dense_residual_Z: float | None = None

    @property
    def worst(self) -> float:
        vals = [self.residual_Y, self.residual_Z, self.dense_residual_Y, self.dense_residual_Z]
        return max(v for v in vals if v is not None)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["worst"] = self.worst
        return d


def verify_invariance(tables: ChainTables, dense_limit: int = 20_000) -> InvarianceReport:
    """||pi~ P - pi~||_1 for Y and Z, through the factorization over exits and densely.

    Both kernels factor as p((x, y), (x', y')) = r(y, x') mu(x', y'), so
    invariance reduces to m r = e~ for the exit marginal m.
    """
    m = tables.exit_marginal
    e = tables.phi_eq_normalized
    res = {c: float(np.abs(m @ density_columns(tables, c) - e).sum()) for c in ("Y", "Z")}
    row_Y = float(np.abs(tables.return_from_exit.sum(axis=1) - 1).max())
    row_Z = float(np.abs(tables.psi_return.sum(axis=1) + tables.psi_escape - 1).max())
    dense = {"Y": None, "Z": None}
    if tables.n_states <= dense_limit:
        pi = invariant_measure(tables)
        for c in ("Y", "Z"):
            dense[c] = float(np.abs(pi @ dense_kernel(tables, c) - pi).sum())
    return InvarianceReport(res["Y"], res["Z"], float(abs(m.sum() - 1)), row_Y, row_Z,
                            dense["Y"], dense["Z"])


def marginal_bounds_check(tables: ChainTables) -> dict:
    """Scaled extremes of the exit marginal, e~ and cap^phi_Delta."""
    g = tables.geom
    scale = g.N ** (g.d - 1)
    m = tables.exit_marginal
    e = tables.phi_eq_normalized
    return {
        "N": g.N,
        "exit_marginal_scaled_min": float(scale * m.min()),
        "exit_marginal_scaled_max": float(scale * m.max()),
        "entry_scaled_min": float(scale * e.min()),
        "entry_scaled_max": float(scale * e.max()),
        "cap_phi_scaled": tables.cap_phi / g.N ** (g.d - 1 - g.gamma),
        "cap_phi": tables.cap_phi,
        "cap_psi": tables.cap_psi,
    }


# ---------------------------------------------------------------- sampling

def _draw_rows(rng: np.random.Generator, probs: np.ndarray) -> int:
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


def y_chain_step(tables: ChainTables, s: int, rng: np.random.Generator, mode: str = "path") -> int:
    _, y = tables.split(int(s))
    if mode == "table":
        x = _draw_rows(rng, entry_law_Y(tables, y))
    elif mode == "path":
        x = _walk_to_entry(tables, tables.exit_idx[y], rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return tables.state(x, _exit_from(tables, x, rng, mode))


def z_chain_step(tables: ChainTables, s: int, rng: np.random.Generator,
                 mode: str = "path", escape_override: float | None = None) -> tuple[int, bool]:
    """One Z step; the flag is set when the walk escaped and a new trajectory starts.

    `escape_override` replaces the escape probability from every exit point
    (table mode only); it is a test hook for the degenerate mixtures.
    """
    _, y = tables.split(int(s))
    if mode == "table":
        esc = tables.psi_escape[y] if escape_override is None else escape_override
        fresh = rng.random() < esc
        if fresh:
            x = _draw_rows(rng, tables.psi_eq_normalized)
        else:
            x = _draw_rows(rng, tables.psi_return[y])
    elif mode == "path":
        if escape_override is not None:
            raise ValueError("the escape override needs table mode")
        x, fresh = _psi_walk_to_entry(tables, tables.exit_idx[y], rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return tables.state(x, _exit_from(tables, x, rng, mode)), bool(fresh)


def _exit_from(tables: ChainTables, x: int, rng, mode: str) -> int:
    if mode == "table":
        return _draw_rows(rng, tables.mu[x])
    g = tables.geom
    ends, _, _ = hit_batch(g.phi_walk, np.array([tables.entry_idx[x]]), g.delta.mask, rng)
    return int(np.searchsorted(tables.exit_idx, ends[0]))


def _walk_to_entry(tables: ChainTables, start: int, rng) -> int:
    g = tables.geom
    ends, _, _ = hit_batch(g.phi_walk, np.array([start]), g.B_mask, rng)
    return int(np.flatnonzero(tables.entry_idx == ends[0])[0])


def _psi_walk_to_entry(tables: ChainTables, start: int, rng) -> int:
    g = tables.geom
    treg = g.psi_walk.region
    tB = g.B.contains(treg.points)
    t_start = treg.index_of(g.domain.points[start][None])
    ends, _, reasons = hit_batch(g.psi_walk, t_start, tB, rng)
    if reasons[0] == ESCAPE:
        return _draw_rows(rng, tables.psi_eq_normalized), True
    hit = treg.points[ends[0]]
    return int(np.flatnonzero((g.B_boundary == hit).all(axis=1))[0]), False


def simulate_chain(tables: ChainTables, chain: str, steps: int, rng: np.random.Generator,
                   mode: str = "table", start: int | None = None) -> np.ndarray:
    """`steps` successive states, the first drawn from the chain's initial law unless given."""
    step = y_chain_step if chain == "Y" else z_chain_step
    out = np.empty(steps, dtype=np.int64)
    s = start if start is not None else _draw_rows(rng, start_distributions(tables)[chain])
    for i in range(steps):
        if i:
            s = step(tables, s, rng, mode)
            if chain == "Z":
                s = s[0]
        out[i] = s
    return out


# ---------------------------------------------------------------- excursion counts

def walk_return_counts(tables: ChainTables, t: int, samples: int,
                       rng: np.random.Generator) -> np.ndarray:
    """N(t) for the stationary bi-infinite phi-walk.

    The phase at time 0 (whether the last visit to B or Delta before 0 was to
    Delta) comes from the reversed walk, which by reversibility is again the
    phi-walk started at X_0.
    """
    g = tables.geom
    kern = g.phi_walk
    starts = stationary_start(g.pair, rng, size=samples)
    back, _, _ = hit_batch(kern, starts, g.B_mask | g.delta.mask, rng, from_zero=False)
    phase_out = g.delta.mask[back]
    return _count_returns(kern.neighbors, kern.cum, starts, phase_out, g.B_mask, g.delta.mask,
                          int(t), rng)


def mean_return_count(tables: ChainTables, t: int) -> float:
    """E[N(t)] = t cap^phi_Delta / ||phi||^2 under the stationary convention."""
    return t * tables.cap_phi / float((tables.geom.pair.phi ** 2).sum())


def interlacement_excursion_counts(tables: ChainTables, trajectories: int,
                                   rng: np.random.Generator) -> np.ndarray:
    """Number of B-to-Delta excursions of independent trajectories entering at e~^Psi_B."""
    g = tables.geom
    psi = g.psi_walk
    treg = psi.region
    tB = g.B.contains(treg.points)
    tD = np.zeros(len(treg), dtype=bool)
    idx = treg.index_of(g.delta.points)
    tD[idx] = True
    t_entry = treg.index_of(g.B_boundary)
    starts = t_entry[rng.choice(tables.n_entry, size=trajectories, p=tables.psi_eq_normalized)]
    counts, complete = _excursion_counts(psi.neighbors, psi.cum, starts, tB, tD,
                                         np.iinfo(np.int64).max, rng)
    return counts


def mean_excursions_per_trajectory(tables: ChainTables) -> float:
    """E[T] from the tables: the number of excursions is geometric with success esc(Y^D)."""
    # Expected excursions = sum_k P(T >= k); the exit law after an excursion
    # started at x is mu(x, .), and each return lands at psi_return.
    esc = tables.psi_escape
    mu = tables.mu
    A = mu @ (tables.psi_return)          # dB x dB: entry -> next entry without escape
    start = tables.psi_eq_normalized
    total = np.linalg.solve(np.eye(tables.n_entry) - A.T, start)
    return float(total.sum())


def excursion_counts(tables: ChainTables, t: int | None = None, u: float | None = None,
                     samples: int = 1000, rng: np.random.Generator | None = None) -> dict:
    """Monte Carlo N(t) for the walk and/or N_Psi(u) for interlacements, with predictions."""
    rng = rng or np.random.default_rng()
    out = {}
    if t is not None:
        c = walk_return_counts(tables, t, samples, rng)
        out["walk"] = {"mean": float(c.mean()), "stderr": float(c.std(ddof=1) / math.sqrt(len(c))),
                       "predicted": mean_return_count(tables, t)}
    if u is not None:
        J = rng.poisson(u * tables.cap_psi, size=samples)
        T = interlacement_excursion_counts(tables, int(J.sum()), rng)
        splits = np.split(T, np.cumsum(J)[:-1])
        per = np.array([s.sum() for s in splits], dtype=float)
        out["interlacement"] = {
            "mean": float(per.mean()), "stderr": float(per.std(ddof=1) / math.sqrt(len(per))),
            "predicted": u * tables.cap_psi * mean_excursions_per_trajectory(tables),
            "predicted_capacity_form": u * tables.geom.pair.lam * tables.cap_phi,
        }
    return out


# ---------------------------------------------------------------- mixing couplings

@dataclass(frozen=True)
class MixingEstimate:
    chain: str
    times: np.ndarray = field(repr=False)   # coalescence step per trial, -1 if not within budget
    budget: int
    bound: int | None
    failure_curve: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"chain": self.chain, "budget": self.budget, "bound": self.bound,
                "trials": int(len(self.times)),
                "coalesced_fraction": float((self.times >= 0).mean())}


def _mixing_bound(times: np.ndarray, budget: int) -> tuple[int | None, np.ndarray]:
    """First k with P(not coalesced by k) <= 1/4."""
    hit = np.where(times >= 0, times, budget + 1)
    ks = np.arange(budget + 1)
    failure = (hit[None, :] > ks[:, None]).mean(axis=1)
    ok = np.flatnonzero(failure <= 0.25)
    return (int(ok[0]) if len(ok) else None), failure


@dataclass
class YCoupling:
    """Coalescing coupling of two Y chains through the ball G = B(x_0, alpha N / 2).

    With probability q = min_x P_x(H_G < H_Delta) both copies route their exit
    through G; there a common exit is drawn with probability m = mu_N(dDelta),
    the mass of the minimum over u in dG of the exit laws. Otherwise each copy
    uses its residual law, so each marginal is exactly mu(x, .).
    """

    tables: ChainTables
    force_route: bool = False
    force_common: bool = False

    def __post_init__(self):
        t = self.tables
        self.pG = t.G_hit.sum(axis=1)
        if np.any(self.pG <= 0):
            raise SupportError("some entry point cannot reach G before Delta")
        self.q = float(self.pG.min())
        self.route = t.G_hit / self.pG[:, None]
        G_exit = t.exit_law[t.G_idx]
        floor = G_exit.min(axis=0)
        self.m = float(floor.sum())
        if self.m <= 1e-300:
            raise SupportError("the exit laws from dG have no common mass")
        self.common = floor / self.m
        self.residual_G = (G_exit - floor[None, :]) / max(1 - self.m, 1e-300)
        mixture = self.route @ G_exit
        mu = t.mu
        if self.q < 1:
            res = (mu - self.q * mixture) / (1 - self.q)
            if res.min() < -1e-12:
                raise CouplingError("negative residual exit law")
            self.residual_x = np.maximum(res, 0.0)
        else:
            self.residual_x = None

    def exits(self, x1: int, x2: int, rng) -> tuple[int, int]:
        t = self.tables
        if x1 == x2:
            y = _draw_rows(rng, t.mu[x1])
            return y, y
        route = self.force_route or rng.random() < self.q
        if route:
            if self.force_common or rng.random() < self.m:
                y = _draw_rows(rng, self.common)
                return y, y
            u1 = _draw_rows(rng, self.route[x1])
            u2 = _draw_rows(rng, self.route[x2])
            return _draw_rows(rng, self.residual_G[u1]), _draw_rows(rng, self.residual_G[u2])
        return _draw_rows(rng, self.residual_x[x1]), _draw_rows(rng, self.residual_x[x2])

    def step(self, s1: int, s2: int, rng) -> tuple[int, int]:
        t = self.tables
        if s1 == s2:
            s = y_chain_step(t, s1, rng, mode="table")
            return s, s
        _, w1 = t.split(s1)
        _, w2 = t.split(s2)
        x1 = _draw_rows(rng, entry_law_Y(t, w1))
        x2 = x1 if w1 == w2 else _draw_rows(rng, entry_law_Y(t, w2))
        y1, y2 = self.exits(x1, x2, rng)
        return t.state(x1, y1), t.state(x2, y2)


@dataclass
class ZCoupling:
    """Coalescing coupling of two Z chains by a shared fresh entry.

    With probability p_N <= min_w P^Psi_w(H_B = oo) both copies take the same
    entry drawn from e~^Psi_B and the same exit; otherwise each copy uses the
    residual entry law (P(w, .) - p_N e~) / (1 - p_N).
    """

    tables: ChainTables
    p: float | None = None
    force_fresh: bool = False

    def __post_init__(self):
        t = self.tables
        p_max = float(t.psi_escape.min())
        self.p = p_max if self.p is None else float(self.p)
        eq = t.psi_eq_normalized
        res = t.psi_return + (t.psi_escape - self.p)[:, None] * eq[None, :]
        if res.min() < -1e-12:
            raise CouplingError(
                f"p_N = {self.p:.4g} exceeds the smallest escape probability {p_max:.4g}")
        self.residual = np.maximum(res, 0.0) / max(1 - self.p, 1e-300)

    def step(self, s1: int, s2: int, rng) -> tuple[int, int]:
        t = self.tables
        if s1 == s2:
            s, _ = z_chain_step(t, s1, rng, mode="table")
            return s, s
        _, w1 = t.split(s1)
        _, w2 = t.split(s2)
        if self.force_fresh or rng.random() < self.p:
            x = _draw_rows(rng, t.psi_eq_normalized)
            y = _draw_rows(rng, t.mu[x])
            s = t.state(x, y)
            return s, s
        x1 = _draw_rows(rng, self.residual[w1])
        x2 = x1 if w1 == w2 else _draw_rows(rng, self.residual[w2])
        y1 = _draw_rows(rng, t.mu[x1])
        y2 = y1 if x1 == x2 else _draw_rows(rng, t.mu[x2])
        return t.state(x1, y1), t.state(x2, y2)


def coalescence_times(coupling, starts: np.ndarray, budget: int, rng) -> np.ndarray:
    times = np.full(len(starts), -1, dtype=np.int64)
    for i, (a, b) in enumerate(starts):
        s1, s2 = int(a), int(b)
        for k in range(budget + 1):
            if s1 == s2:
                times[i] = k
                break
            if k < budget:
                s1, s2 = coupling.step(s1, s2, rng)
    return times


def _pair_starts(tables: ChainTables, trials: int, rng) -> np.ndarray:
    pi = invariant_measure(tables)
    return rng.choice(len(pi), size=(trials, 2), p=pi / pi.sum())


def mixing_estimate_Y(tables: ChainTables, trials: int, rng, budget: int = 1000,
                      starts: np.ndarray | None = None, **hooks) -> MixingEstimate:
    starts = _pair_starts(tables, trials, rng) if starts is None else starts
    times = coalescence_times(YCoupling(tables, **hooks), starts, budget, rng)
    bound, curve = _mixing_bound(times, budget)
    return MixingEstimate("Y", times, budget, bound, curve)


def mixing_estimate_Z(tables: ChainTables, trials: int, rng, budget: int = 1000,
                      starts: np.ndarray | None = None, **hooks) -> MixingEstimate:
    starts = _pair_starts(tables, trials, rng) if starts is None else starts
    times = coalescence_times(ZCoupling(tables, **hooks), starts, budget, rng)
    bound, curve = _mixing_bound(times, budget)
    return MixingEstimate("Z", times, budget, bound, curve)


def coupling_faithfulness(coupling, chain: str, pairs, samples: int, rng) -> dict:
    """Chi-square p-values of both marginals of one coupled step against the chain's kernel.

    Every start pair (s1, s2) with s1 != s2 is stepped `samples` times; each
    copy must follow `transition_row` of its own start.
    """
    t = coupling.tables
    pvalues = []
    for s1, s2 in pairs:
        c1 = np.zeros(t.n_states)
        c2 = np.zeros(t.n_states)
        for _ in range(samples):
            a, b = coupling.step(int(s1), int(s2), rng)
            c1[a] += 1
            c2[b] += 1
        pvalues.append(chi_square_pvalue(c1, transition_row(t, int(s1), chain)))
        pvalues.append(chi_square_pvalue(c2, transition_row(t, int(s2), chain)))
    return {"chain": chain, "pvalues": pvalues, "min_pvalue": float(min(pvalues)),
            "tests": len(pvalues)}


# ---------------------------------------------------------------- soft local time inputs

@dataclass(frozen=True)
class SoftLocalTimeInputs:
    """Quantities the soft local time bound needs for the Y/Z pair."""

    N: int
    pi_min: float
    g_min: float
    var_min: float
    rho_sup: float
    var_scaled_min: float
    rho_sup_scaled: float
    mu_floor: float
    floored_cells: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def density_columns(tables: ChainTables, chain: str) -> np.ndarray:
    """rho_(x, y)(s) = p(s, (x, y)) / mu(x, y) depends only on (x, exit of s): dDelta x dB."""
    if chain == "Y":
        return tables.return_from_exit
    return tables.psi_return + tables.psi_escape[:, None] * tables.psi_eq_normalized[None, :]


def slt_inputs(tables: ChainTables) -> SoftLocalTimeInputs:
    """Variances of rho_z under pi~, sup norms and the minimum of g = pi~/mu = e~."""
    m = tables.exit_marginal
    g = tables.phi_eq_normalized
    variances, sups = [], []
    for chain in ("Y", "Z"):
        R = density_columns(tables, chain)
        mean = m @ R
        variances.append(m @ (R ** 2) - mean ** 2)
        sups.append(R.max())
    var = np.minimum(*variances)
    pi_min = float(invariant_measure(tables).min())
    N, d = tables.geom.N, tables.geom.d
    return SoftLocalTimeInputs(
        N=N, pi_min=pi_min, g_min=float(g.min()), var_min=float(var.min()),
        rho_sup=float(max(s for s in sups)),
        var_scaled_min=float(var.min() * N ** (2 * (d - 1))),
        rho_sup_scaled=float(max(sups) * N ** (d - 1)),
        mu_floor=tables.mu_floor, floored_cells=tables.floored_cells)


def write_diagnostics(path: str | Path, records: list[dict]) -> None:
    with open(path, "a") as fh:
        for r in records:
            fh.write(json.dumps(r, default=float) + "\n")
