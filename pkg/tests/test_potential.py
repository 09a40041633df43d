import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.potential import (equilibrium_measure, escape_probability, green_constant,
                                  green_envelope, load_measure, poisson_labels,
                                  sample_interlacement_trace, save_measure, srw_escape_bracket,
                                  srw_region_around, tilted_green, vacancy_law_check)
from tiltcouple.walks import srw_kernel_on

# Watson's value of the simple random walk Green function at the origin of Z^3.
G0_Z3 = 1.516386059151978
ORIGIN = np.array([[0, 0, 0]])


def test_green_constant_three_dimensions():
    assert green_constant(3) == pytest.approx(3 / (2 * math.pi))
    lo, hi = green_envelope(np.array([10.0]), 3)
    assert lo[0] < 3 / (2 * math.pi * 10) < hi[0]


def test_point_escape_bracket_contains_known_value():
    est = srw_escape_bracket(ORIGIN)
    assert est.lower[0] <= 1 / G0_Z3 <= est.upper[0]
    assert est.width < 1e-3


def test_green_bracket_at_origin_contains_known_value():
    kern = srw_kernel_on(srw_region_around(ORIGIN))
    g = tilted_green(kern, [0, 0, 0], [0, 0, 0])
    assert g.lower <= G0_Z3 <= g.upper


def test_escape_monte_carlo_agrees_with_bracket(rng):
    K = np.array([[0, 0, 0], [1, 0, 0]])
    brk = escape_probability(K, mode="bracket")
    mc = escape_probability(K, mode="mc", samples=4000, rng=rng)
    assert np.all(np.abs(mc.value - brk.value) < 4 * mc.stderr)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        escape_probability(ORIGIN, mode="exact")


pairs = st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3)).filter(lambda p: p != (0, 0, 0))


@given(pairs)
@settings(max_examples=8, deadline=None)
def test_capacity_monotone_and_subadditive(p):
    single = equilibrium_measure(ORIGIN, radius=12).capacity
    both = equilibrium_measure(np.array([[0, 0, 0], list(p)]), radius=12).capacity
    assert single - 1e-3 < both < 2 * single + 1e-3


def test_measure_roundtrip(tmp_path):
    eq = equilibrium_measure(np.array([[0, 0, 0], [1, 0, 0]]), radius=10)
    save_measure(eq, tmp_path / "m.txt", {"note": "x"})
    back = load_measure(tmp_path / "m.txt")
    assert np.array_equal(back.support, eq.support)
    assert np.array_equal(back.weights, eq.weights)
    assert (back.lower, back.upper, back.method) == (eq.lower, eq.upper, eq.method)


def test_poisson_labels(rng):
    assert len(poisson_labels(2.0, 0.0, rng)) == 0
    counts = []
    for _ in range(2000):
        lab = poisson_labels(3.0, 2.0, rng)
        assert np.all(np.diff(lab) > 0) and np.all((lab > 0) & (lab <= 2.0))
        counts.append(len(lab))
    assert abs(np.mean(counts) - 6.0) < 4 * math.sqrt(6.0 / 2000)


def test_interlacement_at_level_zero_is_empty(rng):
    eq = equilibrium_measure(ORIGIN, radius=10)
    kern = srw_kernel_on(srw_region_around(ORIGIN, 10))
    sample = sample_interlacement_trace(kern, eq, 0.0, rng)
    assert sample.count == 0 and sample.trace() == set()
    with pytest.raises(ValueError):
        sample_interlacement_trace(kern, eq, -1.0, rng)


def test_vacancy_law_small_sample(rng):
    eq = equilibrium_measure(ORIGIN, radius=10)
    kern = srw_kernel_on(srw_region_around(ORIGIN, 10))
    res = vacancy_law_check(kern, eq, 1.0, 2000, rng)
    assert abs(res["z_score"]) < 4
