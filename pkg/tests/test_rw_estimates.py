import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.lattice import LatticeDomain, ball_region
from tiltcouple.rw_estimates import (ball_spectral_survival, confinement_decay_check,
                                     exact_survival, gambler_ruin_check, ruin_formula,
                                     transition_matrix)
from tiltcouple.walks import run_fixed_steps, srw_kernel_on


@given(st.floats(1, 10), st.floats(0.1, 10))
@settings(max_examples=50, deadline=None)
def test_ruin_formula_boundary_values(inner, gap):
    outer = inner + gap
    f = ruin_formula(np.array([inner, outer, (inner + outer) / 2]), inner, outer, 3)
    assert f[0] == pytest.approx(1) and f[1] == pytest.approx(0, abs=1e-12)
    assert 0 < f[2] < 1


def test_exact_survival_matches_matrix_power():
    region = LatticeDomain(ball_region((0, 0, 0), 3).points())
    k = srw_kernel_on(region)
    P = transition_matrix(k).toarray()
    start = region.index_of(np.array([[0, 0, 0]]))
    alive = np.ones(len(region), dtype=bool)
    for T in (0, 1, 5, 20):
        want = np.linalg.matrix_power(P, T).sum(axis=1)[start]
        assert exact_survival(k, alive, start, T) == pytest.approx(want)


def test_exact_survival_matches_monte_carlo(rng):
    region = LatticeDomain(ball_region((0, 0, 0), 3).points())
    k = srw_kernel_on(region)
    start = int(region.index_of(np.array([[0, 0, 0]]))[0])
    exact = exact_survival(k, np.ones(len(region), dtype=bool), np.array([start]), 15)[0]
    _, alive = run_fixed_steps(k, np.full(20000, start), 15, rng)
    assert abs(alive.mean() - exact) < 4 * np.sqrt(exact * (1 - exact) / 20000)


def test_spectral_survival_dominates_for_long_times():
    res = ball_spectral_survival(4, 300)
    assert res["exact"] == pytest.approx(res["spectral"], rel=1e-3)


def test_gambler_ruin_profile_improves():
    devs = [gambler_ruin_check(N, 0.2, 0.4).measured["deviation"] for N in (16, 24)]
    assert devs[1] < devs[0]


def test_confinement_fit_reports_rate(rng):
    fit = confinement_decay_check("ball", 4, [0, 8, 16, 32], 2000, rng)
    assert fit.rate > 0
    assert np.all(np.diff(fit.exact) <= 0)
    assert np.all(np.abs(fit.survival - fit.exact) <= 4 * np.maximum(fit.stderr, 1 / 2000) + 1e-12)
