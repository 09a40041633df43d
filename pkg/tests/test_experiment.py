import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.harness.experiment import (coupling_level, excursion_level, inclusion_check,
                                           run_coupling_experiment)
from tiltcouple.lattice import ball_region

points = st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3))
point_sets = st.sets(points, max_size=25)


def test_empty_sets_include():
    left, right, wit = inclusion_check(set(), set(), set())
    assert left and right and wit == {"left": [], "right": []}


@given(point_sets, point_sets)
@settings(max_examples=50, deadline=None)
def test_equal_range_and_plus_trace(minus, rng_set):
    assert inclusion_check(minus, rng_set, rng_set)[1]


@given(point_sets, point_sets, point_sets)
@settings(max_examples=200, deadline=None)
def test_inclusion_matches_brute_force(a, b, c):
    left, right, wit = inclusion_check(a, b, c)
    assert left == all(p in b for p in a)
    assert right == all(p in c for p in b)
    assert set(wit["left"]) <= a - b and len(wit["left"]) == min(10, len(a - b))
    assert set(wit["right"]) <= b - c


@given(point_sets, point_sets, point_sets)
@settings(max_examples=50, deadline=None)
def test_inclusion_restricted_to_region(a, b, c):
    B = ball_region((0, 0, 0), 2)
    inside = lambda s: {p for p in s if sum(x * x for x in p) <= 4}  # noqa: E731
    assert inclusion_check(a, b, c, B)[:2] == inclusion_check(inside(a), inside(b), inside(c))[:2]


def test_level_recomputed_from_eigenpair(config, tables8):
    level = coupling_level(config, tables8)
    pair = tables8.geom.pair
    t = config.t_N(8)
    assert level.t == t
    assert level.u == t / (pair.lam * float(np.dot(pair.phi, pair.phi)))
    assert level.u == excursion_level(t, pair.lam, pair.phi)
    assert level.eps == config.eps_N(8)


def test_degenerate_level_gives_empty_sets(config, tables8):
    summary = run_coupling_experiment(config, tables8, trials=5, t=0)
    assert summary.frequency == 1.0
    for o in summary.outcomes:
        assert o.valid and o.holds
        assert all(v == 0 for v in o.counts.values())


@pytest.fixture(scope="module")
def paired_runs(config, tables8):
    base = run_coupling_experiment(config, tables8, trials=20)
    wide = run_coupling_experiment(config, tables8, trials=20, eps=1.0)
    return base, wide


def test_full_width_window_gives_left_inclusion(paired_runs):
    _, wide = paired_runs
    assert all(o.left for o in wide.valid)


def test_right_inclusion_monotone_in_window(paired_runs):
    base, wide = paired_runs
    for a, b in zip(base.outcomes, wide.outcomes):
        assert (not a.right) or b.right


def test_chain_level_implication_every_trial(paired_runs):
    for summary in paired_runs:
        assert summary.as_dict()["implication_ok"]
        assert all(o.implication_ok for o in summary.valid)


def test_trials_are_reproducible(config, tables8):
    a = run_coupling_experiment(config, tables8, trials=4).as_dict()
    b = run_coupling_experiment(config, tables8, trials=4).as_dict()
    assert a == b


def test_zero_trials_rejected(config, tables8):
    with pytest.raises(ValueError):
        run_coupling_experiment(config, tables8, trials=0)
