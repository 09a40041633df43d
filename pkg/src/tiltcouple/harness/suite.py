"""Verification suite: every module check in dependency order, collected into one RunRecord.

Each check returns `CheckRecord`s. Asserted checks carry a pass/fail verdict;
report-only checks (`asserted=False`) publish measured constants without a
threshold. An exception inside a check fails that check and the suite moves on.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import spectrum
from ..chains import (YCoupling, ZCoupling, build_tables, coupling_faithfulness, excursion_counts,
                      mixing_estimate_Y, mixing_estimate_Z, simulate_chain, slt_inputs,
                      verify_invariance)
from ..geometry import build_geometry
from ..lattice import GeometryError
from ..measures import total_variation
from ..potential import (capacity_scaling_check, crossing_estimates_check, equilibrium_measure,
                         escape_probability, srw_region_around, vacancy_law_check)
from ..rw_estimates import (ball_spectral_survival, confinement_decay_check, exit_time_tail_check,
                            gambler_ruin_check, probability_bracket_check)
from ..slt import (FiniteChainSpec, PoissonField, SoftLocalTime, coupled_ranges, exact_mixing_time,
                   failure_bound_evaluate, theorem_constants)
from ..walks import srw_kernel_on
from .config import ExperimentConfig
from .experiment import run_coupling_experiment
from .records import CheckRecord, RunRecord
from .seeding import int_seed, rng_for

MODULE_ORDER = ("spectrum", "potential", "chains", "slt", "estimates", "couple")
MODES = ("mc", "bracket", "both")

VACANCY_SETS = {
    "point": [[0, 0, 0]],
    "adjacent": [[0, 0, 0], [1, 0, 0]],
    "distance5": [[0, 0, 0], [5, 0, 0]],
}


@dataclass
class SuiteContext:
    """Configuration, seed and the shared per-N objects (built once, then read-only)."""

    config: ExperimentConfig
    seed: int
    mode: str = "bracket"
    trials: int | None = None
    _pairs: dict = field(default_factory=dict)
    _geoms: dict = field(default_factory=dict)
    _tables: dict = field(default_factory=dict)

    def rng(self, *path) -> np.random.Generator:
        return rng_for(self.seed, *path)

    def pair(self, N: int):
        if N not in self._pairs:
            c = self.config
            self._pairs[N] = spectrum.eigenpair_for(c.make_shape(), N, tol=c.tol, cache_dir=c.cache)
        return self._pairs[N]

    def geometry(self, N: int):
        if N not in self._geoms:
            c = self.config
            self._geoms[N] = build_geometry(c.make_shape(), N, c.alpha, c.eps, c.gamma,
                                            c.escape_multiplier, tol=c.tol, pair=self.pair(N))
        return self._geoms[N]

    def tables(self, N: int):
        if N not in self._tables:
            self._tables[N] = build_tables(self.geometry(N), mu_floor=self.config.mu_floor)
        return self._tables[N]


CheckFn = Callable[[SuiteContext], list[CheckRecord]]


def _record(module, name, passed, metrics, N=None, asserted=True):
    return CheckRecord(module, name, None if passed is None else bool(passed), metrics, N, asserted)


# ---------------------------------------------------------------- spectrum

def check_eigen_asymptotic(ctx: SuiteContext) -> list[CheckRecord]:
    Ns = ctx.config.spectrum_N_list
    res = spectrum.eigen_asymptotic_check(ctx.config.make_shape(), Ns,
                                          pairs={N: ctx.pair(N) for N in Ns})
    target = math.pi ** 2
    res["relative_error"] = abs(res["limit"] - target) / target
    res["target"] = target
    return [_record("spectrum", "eigen_asymptotic", res["relative_error"] <= 0.15, res)]


def check_dirichlet_residual(ctx: SuiteContext) -> list[CheckRecord]:
    out = []
    for N in ctx.config.spectrum_N_list:
        res = spectrum.verify_dirichlet_problem(ctx.pair(N))
        res["solver_residual"] = ctx.pair(N).residual
        ok = res["relative_defect"] <= 1e-10 and res["phi_positive"]
        out.append(_record("spectrum", "dirichlet_residual", ok, res, N))
    return out


def check_norm_scaling(ctx: SuiteContext) -> list[CheckRecord]:
    Ns = sorted(ctx.config.spectrum_N_list)
    d = ctx.config.d
    scaled = [spectrum.phi_norms(ctx.pair(N))[1] / N ** d for N in Ns]
    ratios = [b / a for a, b in zip(scaled, scaled[1:])]
    ok = all(0.7 <= r <= 1.4 for r in ratios)
    return [_record("spectrum", "norm_scaling", ok,
                    {"N": Ns, "norm2_over_N^d": scaled, "consecutive_ratios": ratios})]


def check_spectral_gap(ctx: SuiteContext) -> list[CheckRecord]:
    N = ctx.config.small_N
    pair = ctx.pair(N)
    beta = spectrum.second_eigenvalue_estimate(pair)
    return [_record("spectrum", "spectral_gap", None,
                    {"lambda": pair.lam, "second": beta, "gap": pair.lam - beta}, N, asserted=False)]


# ---------------------------------------------------------------- potential

def check_vacancy_law(ctx: SuiteContext) -> list[CheckRecord]:
    out = []
    samples = ctx.config.samples
    for name, K in VACANCY_SETS.items():
        K = np.array(K)
        eq = equilibrium_measure(K, mode="bracket")
        kernel = srw_kernel_on(srw_region_around(K))
        rows = []
        for u in (0.5, 1.0, 2.0):
            rows.append(vacancy_law_check(kernel, eq, u, samples, ctx.rng("potential", "vacancy", name, str(u))))
        width = eq.relative_width
        ok = width < 0.01 and all(abs(r["z_score"]) < 3 for r in rows)
        out.append(_record("potential", f"vacancy_law[{name}]", ok,
                           {"capacity": eq.capacity, "relative_width": width, "rows": rows}))
        if ctx.mode in ("mc", "both"):
            est = escape_probability(K, mode="mc", samples=samples,
                                     rng=ctx.rng("potential", "capacity_mc", name))
            cap = float(est.value.sum())
            se = float(np.sqrt((est.stderr ** 2).sum()))
            z = (cap - eq.capacity) / se if se > 0 else 0.0
            out.append(_record("potential", f"capacity_mc[{name}]", abs(z) < 3,
                               {"mc": cap, "bracket": eq.capacity, "stderr": se, "z_score": z}))
    return out


def check_capacity_scaling(ctx: SuiteContext) -> list[CheckRecord]:
    res = capacity_scaling_check([ctx.geometry(N) for N in ctx.config.N_list])
    return [_record("potential", "capacity_scaling", None, res, asserted=False)]


def check_crossing_estimates(ctx: SuiteContext) -> list[CheckRecord]:
    out = []
    for N in ctx.config.N_list:
        res = crossing_estimates_check(ctx.geometry(N), 2000, ctx.rng("potential", "crossing", N),
                                       max_starts=6)
        out.append(_record("potential", "crossing_estimates", None, res, N, asserted=False))
    return out


# ---------------------------------------------------------------- chains

def check_excursion_identity(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    N = c.check_N
    T = ctx.tables(N)
    out = []
    for t in (c.t_N(N), 2 * c.t_N(N)):
        res = excursion_counts(T, t=t, samples=c.excursion_samples,
                               rng=ctx.rng("chains", "excursions", N, t))["walk"]
        res["t"] = t
        res["z_score"] = (res["mean"] - res["predicted"]) / res["stderr"]
        out.append(_record("chains", "excursion_identity", abs(res["z_score"]) < 3, res, N))
    return out


def check_invariant_measure(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    N = c.small_N
    T = ctx.tables(N)
    inv = verify_invariance(T)
    out = [_record("chains", "invariance_exact", inv.worst <= 1e-8, inv.as_dict(), N)]
    for chain in ("Y", "Z"):
        states = simulate_chain(T, chain, c.chain_steps, ctx.rng("chains", "marginal", chain), mode="path")
        x, _ = T.split(states)
        emp = np.bincount(x, minlength=T.n_entry) / len(x)
        tv = total_variation(emp, T.phi_eq_normalized)
        out.append(_record("chains", f"entrance_marginal[{chain}]", tv < 0.05,
                           {"tv": tv, "steps": c.chain_steps}, N))
    return out


def check_mixing(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    out = []
    small = ctx.tables(c.small_N)
    rng = ctx.rng("chains", "faithful")
    for name, coupling in (("Y", YCoupling(small)), ("Z", ZCoupling(small))):
        pairs = rng.choice(small.n_states, size=(3, 2))
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        res = coupling_faithfulness(coupling, name, pairs, 20_000, rng)
        out.append(_record("chains", f"coupling_faithful[{name}]", res["min_pvalue"] > 1e-3, res,
                           c.small_N))
    for N in sorted({c.small_N, c.check_N} | set(c.N_list)):
        T = ctx.tables(N)
        for name, fn in (("Y", mixing_estimate_Y), ("Z", mixing_estimate_Z)):
            est = fn(T, c.mixing_trials, ctx.rng("chains", "mixing", name, N), budget=c.budget)
            res = est.as_dict()
            res["scaled_bound"] = (est.bound / N ** (1 - c.gamma)) if est.bound is not None else None
            asserted = N == c.check_N
            out.append(_record("chains", f"coalescence[{name}]",
                               res["coalesced_fraction"] >= 0.99 if asserted else None, res, N,
                               asserted=asserted))
    return out


def check_slt_inputs(ctx: SuiteContext) -> list[CheckRecord]:
    return [_record("chains", "slt_inputs", None, slt_inputs(ctx.tables(N)).as_dict(), N,
                    asserted=False) for N in ctx.config.N_list]


# ---------------------------------------------------------------- slt

def toy_chain_pair(seed: int, k: int = 6) -> tuple[FiniteChainSpec, FiniteChainSpec]:
    """A reversible chain with random conductances and a Metropolis chain with the same pi."""
    rng = np.random.default_rng(seed)
    A = rng.random((k, k))
    A = A + A.T
    PY = A / A.sum(axis=1, keepdims=True)
    pi = A.sum(axis=1) / A.sum()
    PZ = np.minimum(1.0, pi[None, :] / pi[:, None]) / k
    np.fill_diagonal(PZ, 0.0)
    np.fill_diagonal(PZ, 1.0 - PZ.sum(axis=1))
    start = np.full(k, 1.0 / k)
    return FiniteChainSpec(PY, start), FiniteChainSpec(PZ, start)


def _transition_frequencies(states: np.ndarray, k: int) -> np.ndarray:
    c = np.zeros((k, k))
    np.add.at(c, (states[:-1], states[1:]), 1)
    return c / c.sum()


def check_slt_engine(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    Y, Z = toy_chain_pair(int_seed(ctx.seed, "slt", "toy"))
    pi = Y.pi
    steps = c.chain_steps
    record = tuple(range(0, steps + 1, max(steps // 50, 1)))
    engine = SoftLocalTime(PoissonField(pi, int_seed(ctx.seed, "slt", "field")), Y.density(pi),
                           record_steps=record)
    engine.run(steps)
    seq = np.array(engine.states)
    direct = Y.simulate(steps, ctx.rng("slt", "direct"))
    tv = 0.5 * float(np.abs(_transition_frequencies(seq, Y.n) - _transition_frequencies(direct, Y.n)).sum())
    hist = [engine.history[m] for m in sorted(engine.history)]
    monotone = all(bool(np.all(b >= a)) for a, b in zip(hist, hist[1:]))
    out = [_record("slt", "engine_equivalence", tv < 0.02 and monotone,
                   {"tv": tv, "steps": steps, "G_monotone": monotone,
                    "snapshots": len(hist)})]
    runs, agree, holds = 200, True, 0
    for s in range(runs):
        rep, _, _ = coupled_ranges(Y, Z, pi, PoissonField(pi, int_seed(ctx.seed, "slt", "coupled", s)),
                                   100, 0.3)
        agree &= rep.methods_agree
        holds += rep.holds
    out.append(_record("slt", "pointwise_methods_agree", agree,
                       {"runs": runs, "n": 100, "eps": 0.3, "inclusion_frequency": holds / runs}))
    tm = {"Y": exact_mixing_time(Y.P, pi), "Z": exact_mixing_time(Z.P, pi)}
    const = theorem_constants(Y, Z, pi, pi, tm, 0.1)
    bound = failure_bound_evaluate(const, 10_000, 0.1, {"Y": Y.start, "Z": Z.start},
                                   c.bound_C, c.bound_c)
    out.append(_record("slt", "theorem_constants", None,
                       {"constants": const.as_dict(), "failure_bound": bound.as_dict()}, asserted=False))
    return out


# ---------------------------------------------------------------- estimates

def check_gambler_ruin(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    Ns = sorted(c.ruin_N_list)
    reports = [gambler_ruin_check(N, c.alpha, c.eps, d=c.d).as_dict() for N in Ns]
    dev = [r["measured"]["deviation"] for r in reports]
    ok = dev[-1] <= 0.25 and dev[-1] < dev[0]
    return [_record("estimates", "gambler_ruin", ok, {"N": Ns, "deviation": dev, "reports": reports})]


def check_probability_bracket(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    N = c.check_N
    pair = ctx.pair(N)
    # First lattice point outside B on the first axis.
    start = np.array(pair.anchor) + np.eye(c.d, dtype=np.int64)[0] * (math.floor(c.alpha * N) + 1)
    rep = probability_bracket_check(pair, c.alpha * N, (c.alpha + c.eps) * N, start, c.bracket_samples,
                                    ctx.rng("estimates", "bracket", N), k_max=c.k_max)
    d = rep.as_dict()
    d["remainder_fraction"] = rep.remainder / max(rep.upper * rep.kappa, 1e-300)
    const = probability_bracket_check(pair, c.alpha * N, (c.alpha + c.eps) * N, start, c.bracket_samples,
                                      ctx.rng("estimates", "bracket_const", N), k_max=c.k_max,
                                      constant_tilt=True)
    return [_record("estimates", "probability_bracket", rep.holds and not rep.flagged, d, N),
            _record("estimates", "probability_bracket_constant_tilt", const.holds, const.as_dict(), N)]


def check_exit_tail(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    out = []
    for N in c.N_list:
        rep = exit_time_tail_check(N, c.alpha, 0.3, c.samples, ctx.rng("estimates", "tail", N), d=c.d)
        out.append(_record("estimates", "exit_time_tail", None, rep.as_dict(), N, asserted=False))
    return out


def check_confinement(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    ball = confinement_decay_check("ball", 6, [0, 18, 36, 72, 144, 360], c.samples,
                                   ctx.rng("estimates", "confine", "ball"), d=c.d)
    ann = confinement_decay_check("annulus", 4, [0, 8, 16, 32, 64, 160], c.samples,
                                  ctx.rng("estimates", "confine", "annulus"), d=c.d, inner=6)
    c0 = spectrum.eigen_asymptotic_check(c.make_shape(), c.spectrum_N_list,
                                         pairs={N: ctx.pair(N) for N in c.spectrum_N_list})["c0"]
    relation = ann.rate > c.eps ** 2 * c0
    metrics = {"ball": ball.as_dict(), "annulus": ann.as_dict(), "c_b": ball.rate, "c_a": ann.rate,
               "c0": c0, "eps": c.eps, "relation_c_a_gt_eps2_c0": relation,
               "spectral": ball_spectral_survival(6, 36, c.d)}
    return [_record("estimates", "confinement_decay", None, metrics, asserted=False)]


# ---------------------------------------------------------------- coupling

def check_coupling(ctx: SuiteContext) -> list[CheckRecord]:
    c = ctx.config
    trials = ctx.trials or c.trials
    out = []
    for N in sorted(set(c.N_list) | {c.check_N}):
        summary = run_coupling_experiment(c, ctx.tables(N), trials=trials, master_seed=ctx.seed)
        res = summary.as_dict()
        asserted = N == c.check_N
        ok = res["frequency"] >= c.coupling_floor if asserted else None
        out.append(_record("couple", "inclusion_frequency", ok, res, N, asserted=asserted))
        out.append(_record("couple", "implication", res["implication_ok"],
                           {"valid": res["valid"], "trials": res["trials"]}, N))
    return out


CHECKS: dict[str, list[tuple[str, CheckFn]]] = {
    "spectrum": [("eigen_asymptotic", check_eigen_asymptotic),
                 ("dirichlet_residual", check_dirichlet_residual),
                 ("norm_scaling", check_norm_scaling),
                 ("spectral_gap", check_spectral_gap)],
    "potential": [("vacancy_law", check_vacancy_law),
                  ("capacity_scaling", check_capacity_scaling),
                  ("crossing_estimates", check_crossing_estimates)],
    "chains": [("excursion_identity", check_excursion_identity),
               ("invariant_measure", check_invariant_measure),
               ("mixing", check_mixing),
               ("slt_inputs", check_slt_inputs)],
    "slt": [("engine", check_slt_engine)],
    "estimates": [("gambler_ruin", check_gambler_ruin),
                  ("probability_bracket", check_probability_bracket),
                  ("exit_time_tail", check_exit_tail),
                  ("confinement", check_confinement)],
    "couple": [("coupling", check_coupling)],
}


def run_checks(ctx: SuiteContext, checks, record: RunRecord, on_record=None) -> RunRecord:
    for module, name, fn in checks:
        t0 = time.perf_counter()
        try:
            results = fn(ctx)
        except (GeometryError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            kind = "geometry" if isinstance(exc, GeometryError) else "runtime"
            results = [CheckRecord(module, name, False, {"error_class": kind},
                                   error=f"{type(exc).__name__}: {exc}")]
        elapsed = time.perf_counter() - t0
        for r in results:
            record.add(r)
            if on_record is not None:
                on_record(r)
        record.timings[f"{module}.{name}"] = elapsed
    return record


def select_checks(modules=MODULE_ORDER) -> list[tuple[str, str, CheckFn]]:
    unknown = set(modules) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown modules {sorted(unknown)}")
    return [(m, name, fn) for m in MODULE_ORDER if m in modules for name, fn in CHECKS[m]]


def run_verification_suite(config: ExperimentConfig, modules=MODULE_ORDER, checks=None,
                           seed: int | None = None, mode: str = "bracket", trials: int | None = None,
                           command: str = "suite", on_record=None) -> RunRecord:
    """Run the selected checks in dependency order; `checks=[]` gives an empty record."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    seed = config.seed if seed is None else int(seed)
    ctx = SuiteContext(config, seed, mode=mode, trials=trials)
    record = RunRecord(config.hash(), seed, command=command)
    chosen = select_checks(modules) if checks is None else checks
    return run_checks(ctx, chosen, record, on_record)
