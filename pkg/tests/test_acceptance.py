"""Acceptance criteria AC1-AC11 at their stated tolerances and runtime budgets.

Each test prints one `ACn pass|fail: ...` line; the lines are repeated in the
pytest terminal summary.
"""

import math
import time

from tiltcouple.harness import suite


def run(ctx, fn):
    t0 = time.perf_counter()
    records = fn(ctx)
    return records, time.perf_counter() - t0


def asserted_ok(records):
    return all(r.passed for r in records if r.asserted)


def by_name(records, name):
    return [r for r in records if r.name == name]


def test_ac1_eigenvalue_asymptotic(ctx, report):
    records, elapsed = run(ctx, suite.check_eigen_asymptotic)
    m = records[0].metrics
    ok = records[0].passed and abs(m["limit"] - math.pi ** 2) <= 0.15 * math.pi ** 2 and elapsed <= 300
    report("AC1", ok, f"extrapolated 2dN^2(1-lambda) = {m['limit']:.4f} vs pi^2 = {math.pi ** 2:.4f} "
                      f"(rel err {m['relative_error']:.2e}); scaled gaps "
                      f"{[round(g, 3) for g in m['scaled_gap']]}; {elapsed:.1f}s")
    assert ok


def test_ac2_dirichlet_residual(ctx, report):
    records, elapsed = run(ctx, suite.check_dirichlet_residual)
    worst = max(r.metrics["relative_defect"] for r in records)
    ok = asserted_ok(records) and worst <= 1e-10 and len(records) == 4 and elapsed <= 60
    report("AC2", ok, f"max relative Dirichlet defect {worst:.2e} over N = "
                      f"{[r.N for r in records]}; {elapsed:.1f}s")
    assert ok


def test_ac3_norm_scaling(ctx, report):
    records, elapsed = run(ctx, suite.check_norm_scaling)
    ratios = records[0].metrics["consecutive_ratios"]
    ok = records[0].passed and all(0.7 <= r <= 1.4 for r in ratios) and elapsed <= 60
    report("AC3", ok, f"consecutive ratios of |phi|^2/N^d {[round(r, 4) for r in ratios]}; {elapsed:.1f}s")
    assert ok


def test_ac4_vacancy_law(ctx, report):
    records, elapsed = run(ctx, suite.check_vacancy_law)
    details = []
    ok = len(records) == 3 and elapsed <= 600
    for r in records:
        m = r.metrics
        zs = [row["z_score"] for row in m["rows"]]
        ok &= r.passed and m["relative_width"] < 0.01 and all(abs(z) < 3 for z in zs)
        details.append(f"{r.name}: cap {m['capacity']:.5f}, width {m['relative_width']:.1e}, "
                       f"z {[round(z, 2) for z in zs]}")
    report("AC4", ok, "; ".join(details) + f"; {elapsed:.1f}s")
    assert ok


def test_ac5_excursion_count_identity(ctx, report):
    records, elapsed = run(ctx, suite.check_excursion_identity)
    ok = len(records) == 2 and asserted_ok(records) and elapsed <= 900
    ok &= all(abs(r.metrics["z_score"]) < 3 for r in records)
    ok &= ctx.config.excursion_samples >= 500 and records[0].N == 12
    details = [f"t={r.metrics['t']}: mean {r.metrics['mean']:.3f} vs {r.metrics['predicted']:.3f} "
               f"(z {r.metrics['z_score']:.2f})" for r in records]
    report("AC5", ok, "; ".join(details) + f"; {elapsed:.1f}s")
    assert ok


def test_ac6_common_invariant_measure(ctx, report):
    records, elapsed = run(ctx, suite.check_invariant_measure)
    inv = by_name(records, "invariance_exact")[0].metrics
    tvs = {r.name: r.metrics["tv"] for r in records if r.name.startswith("entrance_marginal")}
    ok = (asserted_ok(records) and inv["worst"] <= 1e-8 and len(tvs) == 2
          and all(v < 0.05 for v in tvs.values()) and elapsed <= 900)
    report("AC6", ok, f"|pi P - pi|_1 worst {inv['worst']:.1e}; entrance TV "
                      f"{ {k: round(v, 4) for k, v in tvs.items()} } at {ctx.config.chain_steps} steps, "
                      f"N = {records[0].N}; {elapsed:.1f}s")
    assert ok


def test_ac7_slt_engine(ctx, report):
    records, elapsed = run(ctx, suite.check_slt_engine)
    eq = by_name(records, "engine_equivalence")[0].metrics
    agree = by_name(records, "pointwise_methods_agree")[0]
    ok = (eq["tv"] < 0.02 and eq["G_monotone"] and agree.passed and asserted_ok(records)
          and elapsed <= 120)
    report("AC7", ok, f"transition TV {eq['tv']:.4f} over {eq['steps']} steps; G monotone "
                      f"{eq['G_monotone']}; point-count methods agree {agree.passed}; {elapsed:.1f}s")
    assert ok


def test_ac8_coupling_inclusion(ctx, report):
    records, elapsed = run(ctx, suite.check_coupling)
    freq = {r.N: r.metrics["frequency"] for r in by_name(records, "inclusion_frequency")}
    implication = all(r.passed for r in by_name(records, "implication"))
    target = by_name(records, "inclusion_frequency")
    at12 = [r for r in target if r.N == 12][0]
    holds = at12.metrics["holds"]
    ok = holds >= 90 and at12.metrics["trials"] == 100 and implication and elapsed <= 3600
    report("AC8", ok, f"both inclusions held in {holds}/100 trials at N = 12; frequency by N "
                      f"{ {N: round(f, 2) for N, f in sorted(freq.items())} }; chain-level implication "
                      f"held in every trial: {implication}; {elapsed:.1f}s")
    assert ok


def test_ac9_gamblers_ruin(ctx, report):
    records, elapsed = run(ctx, suite.check_gambler_ruin)
    m = records[0].metrics
    dev = dict(zip(m["N"], m["deviation"]))
    ok = records[0].passed and dev[32] <= 0.25 and dev[32] < dev[16] and elapsed <= 300
    report("AC9", ok, f"profile deviation from the radial formula "
                      f"{ {N: round(v, 3) for N, v in dev.items()} }; {elapsed:.1f}s")
    assert ok


def test_ac10_mixing_couplings(ctx, report):
    records, elapsed = run(ctx, suite.check_mixing)
    faithful = {r.name: r.metrics["min_pvalue"] for r in records if r.name.startswith("coupling_faithful")}
    coalesce = {r.name: r.metrics["coalesced_fraction"] for r in records
                if r.name.startswith("coalescence") and r.N == 12}
    bounds = {(r.name, r.N): r.metrics["bound"] for r in records if r.name.startswith("coalescence")}
    ok = (asserted_ok(records) and len(faithful) == 2 and all(p > 1e-3 for p in faithful.values())
          and len(coalesce) == 2 and all(f >= 0.99 for f in coalesce.values()) and elapsed <= 600)
    report("AC10", ok, f"faithfulness min p {faithful}; coalesced fraction at N = 12 {coalesce}; "
                       f"reported bounds {bounds}; {elapsed:.1f}s")
    assert ok


def test_ac11_probability_bracket(ctx, report):
    records, elapsed = run(ctx, suite.check_probability_bracket)
    m = by_name(records, "probability_bracket")[0].metrics
    ok = (by_name(records, "probability_bracket")[0].passed and m["holds"]
          and m["remainder_fraction"] < 0.1 and records[0].N == 12 and elapsed <= 300)
    report("AC11", ok, f"tilted {m['tilted']:.4f} in [{m['lower']:.4f}, {m['upper']:.4f}] "
                       f"(plain {m['plain']:.4f}); remainder fraction {m['remainder_fraction']:.2e}; "
                       f"{elapsed:.1f}s")
    assert ok

