import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple import spectrum
from tiltcouple.lattice import LatticeDomain, Shape, ball_region, discretize
from tiltcouple.rw_estimates import exact_survival
from tiltcouple.walks import srw_kernel_on

BOX = Shape.box([-1, -1, -1], [1, 1, 1])


@pytest.fixture(scope="module")
def box_pair():
    return spectrum.eigenpair_for(BOX, 3)


def test_box_eigenvalue_has_closed_form(box_pair):
    # Killed walk on {-3..3}^3: lambda = cos(pi / 8), phi = product of sines.
    assert box_pair.lam == pytest.approx(math.cos(math.pi / 8), abs=1e-12)
    pts = box_pair.domain.points
    exact = np.prod(np.sin(math.pi * (pts + 4) / 8), axis=1)
    exact /= exact[box_pair.domain.index_of(np.array([box_pair.anchor]))[0]]
    assert np.abs(box_pair.phi - exact).max() < 1e-10


def test_box_second_eigenvalue(box_pair):
    second = (2 * math.cos(math.pi / 8) + math.cos(math.pi / 4)) / 3
    est = spectrum.second_eigenvalue_estimate(box_pair)
    assert est <= second + 1e-9
    assert est == pytest.approx(second, abs=1e-3)


def test_dirichlet_defects_small(ctx):
    for N in (8, 12):
        res = spectrum.verify_dirichlet_problem(ctx.pair(N))
        assert res["relative_defect"] <= 1e-10
        assert res["boundary_max"] == 0.0 and res["phi_positive"]


def test_anchor_normalisation(ctx):
    pair = ctx.pair(8)
    assert pair.phi_at(np.array([pair.anchor]))[0] == 1.0


def test_disconnected_domain_rejected():
    dom = LatticeDomain(np.array([[0, 0, 0], [3, 0, 0]]))
    with pytest.raises(spectrum.DisconnectedDomainError):
        spectrum.principal_eigenpair(spectrum.build_killed_kernel(dom))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_richardson_recovers_exact_expansion(L, a, b):
    Ns = [8, 16, 24, 32]
    vals = [L + a / N + b / N ** 2 for N in Ns]
    limit, _ = spectrum.richardson_limit(Ns, vals)
    assert limit == pytest.approx(L, abs=1e-9)


def test_eigenpair_roundtrip(tmp_path, box_pair):
    path = tmp_path / "pair.txt"
    spectrum.save_eigenpair(box_pair, path)
    back = spectrum.load_eigenpair(path)
    assert back.lam == box_pair.lam
    assert np.array_equal(back.phi, box_pair.phi)
    assert np.array_equal(back.domain.points, box_pair.domain.points)


def test_removing_a_ball_lowers_eigenvalue():
    dom = discretize(Shape.ball(1.0), 6)
    full, reduced = spectrum.eigenvalue_domain_comparison(dom, ball_region((0, 0, 0), 1))
    assert reduced < full


def test_lambda_power_bracket(ctx):
    pair = ctx.pair(8)
    c0 = spectrum.scaled_gap(pair)
    lhs, rhs, ok = spectrum.lambda_power_bracket(pair, c0, 100)
    assert ok and 1 <= lhs <= rhs


def test_survival_importance_estimator_matches_exact_survival(ctx, rng):
    pair = ctx.pair(8)
    x = np.array(pair.anchor)
    t = 40
    res = spectrum.survival_probability_check(pair, x, t, 4000, rng)
    killed = srw_kernel_on(pair.domain)
    start = pair.domain.index_of(x[None])
    exact = exact_survival(killed, np.ones(len(pair.domain), dtype=bool), start, t)[0]
    assert abs(res["importance_mc"] - exact) < 4 * res["importance_se"]
    assert abs(res["plain_mc"] - exact) < 4 * res["plain_se"]


def test_phi_ratio_bounds_outside_domain_raises(box_pair):
    with pytest.raises(ValueError):
        spectrum.phi_ratio_bounds(box_pair, np.array([[9, 9, 9]]))
    lo, hi = spectrum.phi_ratio_bounds(box_pair, box_pair.domain.points[:5])
    assert lo <= 1 <= hi and lo * hi == pytest.approx(1)
