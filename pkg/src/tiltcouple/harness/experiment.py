"""Trial-level coupling of the tilted walk range with tilted interlacements on B.

One trial works on a single Poisson field over Sigma = dB x dDelta:

1. The entry/exit chains Y (walk) and Z (interlacements) are explored from the
   field by soft local times, so equal consumed points mean equal states.
2. Excursion paths from B to Delta are attached to consumed points. A point
   consumed by both chains carries one shared path; the other points get
   independent bridges with the same conditional law.
3. The walk is rebuilt as the initial path (stationary start up to the first
   return to B after Delta), then alternating excursions and returns. Its range
   on B is read on the shifted time window [a, a + t) with a = ceil(beta t).
4. The interlacement side groups Z into trajectories with Bernoulli variables
   U_i (escape, then re-entry from infinity) and keeps trajectories whose
   Poisson labels fall in a window of length (1 -+ eps) u.
5. Both inclusions are evaluated on site sets, next to the chain-level event
   on consumed points that implies them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..chains import ChainTables, CouplingError, density_columns
from ..potential import poisson_labels
from ..slt import PoissonField, SoftLocalTime, lower_count, range_inclusion, upper_count
from ..walks import _first_return, bridge_walk, stationary_start
from .config import ExperimentConfig
from .seeding import int_seed, rng_for

MAX_WITNESSES = 10
INITIAL_ATTEMPTS = 200_000


def excursion_level(t: int, lam: float, phi: np.ndarray) -> float:
    """u = t / (lambda ||phi||_2^2), the interlacement level matching t walk steps."""
    return t / (lam * float(np.dot(phi, phi)))


@dataclass(frozen=True)
class CouplingLevel:
    N: int
    t: int
    u: float
    eps: float
    beta: float
    lam: float
    norm2: float
    cap_phi: float
    cap_psi: float

    @property
    def n(self) -> float:
        """SLT run length u cap^phi."""
        return self.u * self.cap_phi

    @property
    def expected_excursions(self) -> float:
        """Mean number of excursions in t walk steps, t cap^phi / ||phi||^2."""
        return self.t * self.cap_phi / self.norm2

    @property
    def start(self) -> int:
        return math.ceil(self.beta * self.t)

    def label_window(self, sign: int, margin: float) -> tuple[float, float]:
        """(lo, hi] of length (1 - sign eps) u; sign = +1 is the inner window."""
        lo = self.beta * self.u + sign * margin * self.eps * self.u
        length = (1 - sign * self.eps) * self.u
        lo = max(lo, 0.0)
        return lo, lo + max(length, 0.0)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(n=self.n, expected_excursions=self.expected_excursions, window_start=self.start)
        return d


def coupling_level(config: ExperimentConfig, tables: ChainTables, t: int | None = None,
                   eps: float | None = None) -> CouplingLevel:
    geom = tables.geom
    N = geom.N
    t = config.t_N(N) if t is None else int(t)
    pair = geom.pair
    return CouplingLevel(
        N=N, t=t, u=excursion_level(t, pair.lam, pair.phi) if t > 0 else 0.0,
        eps=config.eps_N(N) if eps is None else float(eps), beta=config.beta, lam=pair.lam,
        norm2=float(np.dot(pair.phi, pair.phi)), cap_phi=tables.cap_phi, cap_psi=tables.cap_psi)


# ---------------------------------------------------------------- inclusion test

def inclusion_check(trace_minus, range_, trace_plus, B=None) -> tuple[bool, bool, dict]:
    """(trace_minus in range, range in trace_plus, witnesses).

    Witnesses list up to ten points breaking each inclusion. With `B` given
    (anything with `contains`), all sets are first intersected with B.
    """
    sets = [set(map(_key, s)) for s in (trace_minus, range_, trace_plus)]
    if B is not None:
        sets = [{p for p in s if bool(np.asarray(B.contains(np.array([p]))).all())} for s in sets]
    lo, mid, hi = sets
    miss_left = sorted(lo - mid)[:MAX_WITNESSES]
    miss_right = sorted(mid - hi)[:MAX_WITNESSES]
    return not miss_left, not miss_right, {"left": miss_left, "right": miss_right}


def _key(p):
    if isinstance(p, (int, np.integer)):
        return int(p)
    return tuple(int(c) for c in p)


# ---------------------------------------------------------------- trial

@dataclass
class TrialOutcome:
    trial: int
    valid: bool
    left: bool = False
    right: bool = False
    reasons: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    chain: dict = field(default_factory=dict)
    implication_ok: bool = True
    witnesses: dict = field(default_factory=dict)
    diagnostic: str | None = None

    @property
    def holds(self) -> bool:
        return self.valid and self.left and self.right

    def as_dict(self) -> dict:
        return {"trial": self.trial, "valid": self.valid, "left": self.left, "right": self.right,
                "holds": self.holds, "reasons": self.reasons, "counts": self.counts,
                "chain": self.chain, "implication_ok": self.implication_ok,
                "witnesses": self.witnesses, "diagnostic": self.diagnostic}


class _Excursions:
    """Excursion paths from B to Delta keyed by consumed field point, drawn on demand."""

    def __init__(self, tables: ChainTables, rng: np.random.Generator):
        self.tables = tables
        self.rng = rng
        self.paths: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, int]] = {}

    def get(self, point: tuple[int, int], state: int):
        """(B-site indices, their times, length) of the excursion attached to `point`."""
        if point not in self.paths:
            T = self.tables
            g = T.geom
            x, y = T.split(state)
            end, steps, seen, when, ok = bridge_walk(
                g.phi_walk, T.exit_law[:, y], T.entry_idx[x], g.delta.mask, g.B_mask, self.rng)
            if not ok or end != T.exit_idx[y]:
                raise CouplingError("excursion bridge did not reach its exit point")
            self.paths[point] = (seen.copy(), when.copy(), int(steps))
        return self.paths[point]


def _densities(tables: ChainTables):
    n_exit = tables.n_exit
    ret_Y = tables.return_from_exit
    ret_Z = density_columns(tables, "Z")
    start_Y = np.repeat(tables.entry_Y, n_exit)
    start_Z = np.repeat(tables.psi_eq_normalized, n_exit)

    def dY(s):
        return start_Y if s is None else np.repeat(ret_Y[s % n_exit], n_exit)

    def dZ(s):
        return start_Z if s is None else np.repeat(ret_Z[s % n_exit], n_exit)

    return dY, dZ


def _initial_path(tables: ChainTables, entry: int, rng: np.random.Generator):
    """Stationary start run to the first return to B after Delta, conditioned on its entry."""
    g = tables.geom
    kern = g.phi_walk
    target = tables.entry_idx[entry]
    for _ in range(INITIAL_ATTEMPTS):
        start = int(stationary_start(g.pair, rng, size=1)[0])
        R1, hit, seen, when = _first_return(kern.neighbors, kern.cum, start, g.B_mask,
                                            g.delta.mask, rng)
        if hit == target:
            return int(R1), seen.copy(), when.copy()
    raise CouplingError("initial path rejection exceeded its attempt budget")


def _return_length(tables: ChainTables, y: int, x_next: int, no_record: np.ndarray, rng) -> int:
    """Length of a return bridge from exit y to entry x_next; it meets B only at its end."""
    g = tables.geom
    end, steps, _, _, ok = bridge_walk(g.phi_walk, tables.return_law[:, x_next],
                                       tables.exit_idx[y], g.B_mask, no_record, rng)
    if not ok or end != tables.entry_idx[x_next]:
        raise CouplingError("return bridge did not reach its entry point")
    return int(steps)


def _walk_side(tables, level, Y: SoftLocalTime, excursions: _Excursions, rng_init, rng_return):
    """Excursions of the walk touching the window, and the range on B inside it."""
    a, t = level.start, level.t
    end = a + t
    Y.extend_to(1)
    x1, _ = tables.split(Y.states[0])
    R, seen0, when0 = _initial_path(tables, int(x1), rng_init)
    initial_length = R
    no_record = np.zeros(len(tables.geom.domain), dtype=bool)
    in_window = (when0 >= a) & (when0 < end)
    range_sites = set(seen0[in_window].tolist())
    touch, full = [], []
    i = 0
    while R < end:
        s = Y.states[i]
        point = Y.points[i]
        seen, when, length = excursions.get(point, s)
        D = R + length
        times = R + when
        hit = (times >= a) & (times < end)
        range_sites.update(seen[hit].tolist())
        if D >= a:
            touch.append(i)
            if R >= a and D < end:
                full.append(i)
        Y.extend_to(i + 2)
        _, y = tables.split(s)
        x_next, _ = tables.split(Y.states[i + 1])
        R = D + _return_length(tables, int(y), int(x_next), no_record, rng_return)
        i += 1
    return {"range": range_sites, "touch": touch, "full": full,
            "initial_in_window": bool(in_window.any()), "initial_length": initial_length,
            "steps_used": i}


def _group_bounds(tables, Z: SoftLocalTime, trajectories: int, rng, max_steps: int) -> list[int]:
    """V_1 < V_2 < ...: the last Z index of each of the first `trajectories` trajectories."""
    esc = tables.psi_escape
    ret = tables.psi_return
    ebar = tables.psi_eq_normalized
    V = []
    i = 0
    while len(V) < trajectories:
        if i >= max_steps:
            raise CouplingError("interlacement side exceeded its step budget")
        Z.extend_to(i + 2)
        _, y = tables.split(Z.states[i])
        x_next, _ = tables.split(Z.states[i + 1])
        fresh = esc[y] * ebar[x_next]
        if rng.random() < fresh / (ret[y, x_next] + fresh):
            V.append(i + 1)
        i += 1
    return V


def _trace(tables, Z, excursions, first: int, last: int) -> tuple[set, list]:
    """B-sites of Z excursions with 1-based indices in (first, last]."""
    sites = set()
    idx = list(range(first, last))
    for i in idx:
        seen, _, _ = excursions.get(Z.points[i], Z.states[i])
        sites.update(seen.tolist())
    return sites, idx


def _index_window(level: CouplingLevel, fraction: float, sign: int) -> tuple[int, int]:
    """Chain-index window (lo, hi] of the proof bookkeeping with eps scaled by `fraction`."""
    n = level.expected_excursions
    e = level.eps * fraction
    lo = math.floor(level.beta * (1 + sign * e) * n)
    hi = math.floor((1 + level.beta) * (1 - sign * e) * n)
    return max(lo, 0), max(hi, 0)


def _points(engine: SoftLocalTime, idx) -> set:
    return {engine.points[i] for i in idx}


def run_trial(tables: ChainTables, level: CouplingLevel, config: ExperimentConfig,
              trial: int, master_seed: int | None = None) -> TrialOutcome:
    """One coupled trial; module errors mark the trial invalid with a diagnostic."""
    seed = config.seed if master_seed is None else master_seed
    path = ("couple", level.N, trial)
    try:
        return _run_trial(tables, level, config, trial, seed, path)
    except (CouplingError, ValueError, RuntimeError) as exc:
        return TrialOutcome(trial=trial, valid=False, diagnostic=f"{type(exc).__name__}: {exc}")


def _run_trial(tables, level, config, trial, seed, path) -> TrialOutcome:
    if level.t <= 0 or level.u <= 0:
        return TrialOutcome(trial=trial, valid=True, left=True, right=True,
                            counts={"range": 0, "trace_minus": 0, "trace_plus": 0},
                            chain={"left": True, "right": True})
    field_ = PoissonField(tables.mu.ravel(), int_seed(seed, *path, "field"))
    dY, dZ = _densities(tables)
    Y = SoftLocalTime(field_, dY)
    Z = SoftLocalTime(field_, dZ)
    excursions = _Excursions(tables, rng_for(seed, *path, "bridges"))

    walk = _walk_side(tables, level, Y, excursions, rng_for(seed, *path, "initial"),
                      rng_for(seed, *path, "returns"))

    margin = config.window_margin
    in_lo, in_hi = level.label_window(+1, margin)
    out_lo, out_hi = level.label_window(-1, margin)
    labels = poisson_labels(level.cap_psi, max(in_hi, out_hi), rng_for(seed, *path, "labels"))
    J = {k: int(np.searchsorted(labels, v, side="right"))
         for k, v in (("in_lo", in_lo), ("in_hi", in_hi), ("out_lo", out_lo), ("out_hi", out_hi))}
    max_steps = 1000 * (max(J.values()) + 10) + 100 * math.ceil(level.expected_excursions + 10)
    V = [0] + _group_bounds(tables, Z, max(J.values()), rng_for(seed, *path, "groups"), max_steps)
    minus, idx_minus = _trace(tables, Z, excursions, V[J["in_lo"]], V[J["in_hi"]])
    plus, idx_plus = _trace(tables, Z, excursions, V[J["out_lo"]], V[J["out_hi"]])

    left, right, witnesses = inclusion_check(minus, walk["range"], plus)

    pts = {"Y_full": _points(Y, walk["full"]), "Y_touch": _points(Y, walk["touch"]),
           "Z_inner": _points(Z, idx_minus), "Z_outer": _points(Z, idx_plus)}
    chain_left = pts["Z_inner"] <= pts["Y_full"]
    chain_right = pts["Y_touch"] <= pts["Z_outer"] and not walk["initial_in_window"]
    implication_ok = (left or not chain_left) and (right or not chain_right)

    reasons = {}
    if not left:
        reasons["left"] = "count" if len(idx_minus) > len(walk["full"]) else "site"
    if not right:
        if walk["initial_in_window"] and pts["Y_touch"] <= pts["Z_outer"]:
            reasons["right"] = "initial"
        else:
            reasons["right"] = "count" if len(walk["touch"]) > len(idx_plus) else "site"

    # Proof bookkeeping on chain indices with eps/4 (walk) and eps/3 (interlacement) windows.
    w_in, w_out = _index_window(level, config.walk_fraction, +1), _index_window(level, config.walk_fraction, -1)
    r_in, r_out = _index_window(level, config.ri_fraction, +1), _index_window(level, config.ri_fraction, -1)
    Y.extend_to(max(w_out[1], w_in[1]))
    Z.extend_to(max(r_out[1], r_in[1]))
    bookkeeping = {
        "left": _points(Z, range(*r_in)) <= _points(Y, range(*w_in)),
        "right": _points(Y, range(*w_out)) <= _points(Z, range(*r_out)),
    }
    n = max(1, round(level.n))
    lo, hi = lower_count(n, level.eps), upper_count(n, level.eps)
    Y.extend_to(n)
    Z.extend_to(hi)
    slt = {"n": n, "left": range_inclusion(Z, lo, Y, n)["points"],
           "right": range_inclusion(Y, n, Z, hi)["points"]}

    y_points = set(Y.points)
    shared = sum(1 for i in set(idx_minus) | set(idx_plus) if Z.points[i] in y_points)
    counts = {"range": len(walk["range"]), "trace_minus": len(minus), "trace_plus": len(plus),
              "Y_touch": len(walk["touch"]), "Y_full": len(walk["full"]),
              "Z_inner": len(idx_minus), "Z_outer": len(idx_plus),
              "trajectories_inner": J["in_hi"] - J["in_lo"],
              "trajectories_outer": J["out_hi"] - J["out_lo"],
              "shared_excursions": shared, "initial_length": walk["initial_length"]}
    return TrialOutcome(
        trial=trial, valid=True, left=left, right=right, reasons=reasons, counts=counts,
        chain={"left": chain_left, "right": chain_right,
               "initial_in_window": walk["initial_in_window"],
               "bookkeeping": bookkeeping, "slt": slt},
        implication_ok=implication_ok,
        witnesses={k: [tables.geom.domain.points[p].tolist() for p in v]
                   for k, v in witnesses.items() if v})


# ---------------------------------------------------------------- experiment

@dataclass
class CouplingSummary:
    N: int
    level: CouplingLevel
    outcomes: list[TrialOutcome]

    @property
    def valid(self) -> list[TrialOutcome]:
        return [o for o in self.outcomes if o.valid]

    @property
    def holds(self) -> int:
        return sum(o.holds for o in self.outcomes)

    @property
    def frequency(self) -> float:
        v = self.valid
        return sum(o.holds for o in v) / len(v) if v else float("nan")

    def as_dict(self) -> dict:
        v = self.valid
        reasons: dict[str, int] = {}
        for o in v:
            for side, why in o.reasons.items():
                reasons[f"{side}:{why}"] = reasons.get(f"{side}:{why}", 0) + 1

        def mean(key):
            return float(np.mean([o.counts[key] for o in v])) if v else float("nan")

        return {
            "N": self.N, "level": self.level.as_dict(), "trials": len(self.outcomes),
            "valid": len(v), "holds": self.holds, "frequency": self.frequency,
            "left_frequency": float(np.mean([o.left for o in v])) if v else float("nan"),
            "right_frequency": float(np.mean([o.right for o in v])) if v else float("nan"),
            "chain_left_frequency": float(np.mean([o.chain["left"] for o in v])) if v else float("nan"),
            "chain_right_frequency": float(np.mean([o.chain["right"] for o in v])) if v else float("nan"),
            "bookkeeping_frequency": float(np.mean([o.chain["bookkeeping"]["left"] and
                                                    o.chain["bookkeeping"]["right"] for o in v]))
            if v else float("nan"),
            "implication_ok": all(o.implication_ok for o in v),
            "failure_reasons": reasons,
            "mean_counts": {k: mean(k) for k in ("range", "trace_minus", "trace_plus", "Y_touch",
                                                 "Z_inner", "Z_outer", "shared_excursions")},
            "invalid_diagnostics": [o.diagnostic for o in self.outcomes if not o.valid][:MAX_WITNESSES],
        }


def run_coupling_experiment(config: ExperimentConfig, tables: ChainTables, trials: int | None = None,
                            t: int | None = None, eps: float | None = None,
                            master_seed: int | None = None) -> CouplingSummary:
    """Per-trial inclusion outcomes at the geometry of `tables`."""
    trials = config.trials if trials is None else int(trials)
    if trials < 1:
        raise ValueError("at least one trial is required")
    level = coupling_level(config, tables, t=t, eps=eps)
    outcomes = [run_trial(tables, level, config, k, master_seed) for k in range(trials)]
    return CouplingSummary(tables.geom.N, level, outcomes)
