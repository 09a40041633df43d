import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.lattice import LatticeDomain
from tiltcouple.measures import chi_square_pvalue, empirical
from tiltcouple.walks import (ESCAPE, HIT, StopCondition, Trajectory, bridge_walk,
                              excursion_decomposition, hit_batch, hitting_times,
                              kernel_from_weights, log_importance_weight, neighbour_weights,
                              path_range, phi_kernel, phi_kernel_defect, reversibility_defect,
                              run_fixed_steps, sample_path, srw_kernel_on, stationary_start,
                              step_distribution)


def segment(L):
    """The 1-d region {0, ..., L} with simple random walk."""
    return srw_kernel_on(LatticeDomain(np.arange(L + 1).reshape(-1, 1)))


def test_phi_kernel_is_stochastic_and_reversible(ctx):
    pair = ctx.pair(8)
    k = phi_kernel(pair)
    assert np.abs(k.prob.sum(axis=1) - 1).max() < 1e-12
    assert phi_kernel_defect(pair) < 1e-10
    assert reversibility_defect(k, pair.phi ** 2) < 1e-12


@given(st.lists(st.floats(0.1, 10), min_size=27, max_size=27), st.floats(0.1, 5))
@settings(max_examples=40, deadline=None)
def test_conductance_walk_reversible(weights, outside):
    grid = np.stack(np.meshgrid(*[np.arange(3)] * 3, indexing="ij"), -1).reshape(-1, 3)
    region = LatticeDomain(grid)
    k = kernel_from_weights(region, weights, outside)
    w = np.asarray(weights)
    total = neighbour_weights(region, w, outside).sum(axis=1)
    assert np.abs(k.prob.sum(axis=1) - 1).max() < 1e-12
    assert reversibility_defect(k, w * total) < 1e-9


def test_kernel_rejects_negative_weights():
    region = LatticeDomain(np.array([[0, 0, 0]]))
    with pytest.raises(ValueError):
        kernel_from_weights(region, [-1.0], 1.0)


def test_psi_kernel_reversible(ctx):
    g = ctx.geometry(8)
    k = g.psi_walk
    total = neighbour_weights(k.region, k.weights, k.outside_weight).sum(axis=1)
    assert reversibility_defect(k, k.weights * total) < 1e-12


def test_one_dimensional_gamblers_ruin(rng):
    # Region {0..L}: hit L before stepping off to -1 with probability (x + 1)/(L + 1).
    L, x, n = 6, 2, 20000
    k = segment(L)
    target = np.zeros(L + 1, dtype=bool)
    target[L] = True
    _, _, reasons = hit_batch(k, np.full(n, x), target, rng)
    p = (reasons == HIT).mean()
    exact = (x + 1) / (L + 1)
    assert abs(p - exact) < 4 * np.sqrt(exact * (1 - exact) / n)
    assert set(np.unique(reasons)) <= {HIT, ESCAPE}


def test_bridge_walk_conditioned_hitting_time(rng):
    # SRW on {1..L} conditioned to hit L before 0 from 1: E[T] = (L^2 - 1) / 3.
    L, n = 10, 4000
    region = LatticeDomain(np.arange(1, L + 1).reshape(-1, 1))
    k = srw_kernel_on(region)
    h = region.points[:, 0] / L
    stop = np.zeros(L, dtype=bool)
    stop[-1] = True
    record = np.zeros(L, dtype=bool)
    times = []
    for _ in range(n):
        end, t, _, _, ok = bridge_walk(k, h, 0, stop, record, rng)
        assert ok and end == L - 1
        times.append(t)
    times = np.array(times)
    assert abs(times.mean() - (L ** 2 - 1) / 3) < 4 * times.std() / np.sqrt(n)


def test_stop_conditions(rng):
    k = segment(4)
    p = sample_path(k, [2], StopCondition(target=np.array([[2]]), from_zero=True), rng)
    assert len(p) == 0 and p.reason == "hit"
    p = sample_path(k, [2], StopCondition(budget=3), rng)
    assert len(p) <= 3
    p = sample_path(k, [2], StopCondition(target=np.array([[2]]), from_zero=False), rng)
    assert p.reason in ("hit", "escape") and len(p) >= 1
    if p.reason == "escape":
        assert p.exit_point[0] in (-1, 5)


def test_fixed_steps_survival_all_or_killed(rng):
    k = segment(3)
    ends, alive = run_fixed_steps(k, np.zeros(200, dtype=np.int64), 1, rng)
    assert set(ends[~alive].tolist()) <= {-1}
    assert 0.3 < alive.mean() < 0.7


def test_hitting_times_and_range():
    traj = Trajectory(np.array([[0], [1], [2], [1], [0]]), "budget")
    K = np.array([[0]])
    assert hitting_times(traj, K) == (0, 4)
    assert hitting_times(traj, np.array([[5]])) == (None, None)
    assert path_range(traj, 2) == {(0,), (1,), (2,)}
    with pytest.raises(ValueError):
        path_range(traj, 9)


def test_excursion_decomposition_by_hand():
    xs = [5, 3, 0, 1, 4, 6, 2, 0, 5, 0]
    traj = Trajectory(np.array(xs).reshape(-1, 1), "budget")
    dec = excursion_decomposition(traj, lambda p: p[:, 0] == 0, lambda p: p[:, 0] >= 4)
    assert dec.departure_0 == 0
    assert dec.returns == [2, 7, 9]
    assert dec.departures == [4, 8]
    assert dec.truncated
    assert dec.records[0].path[:, 0].tolist() == [0, 1, 4]


def test_trajectory_dump_roundtrip(tmp_path):
    traj = Trajectory(np.array([[0, 0, 0], [1, 0, 0]]), "hit", "srw:n=2:N=1", 7)
    traj.dump(tmp_path / "t.txt")
    back = Trajectory.load(tmp_path / "t.txt")
    assert np.array_equal(back.points, traj.points)
    assert (back.reason, back.kernel_id, back.seed) == ("hit", "srw:n=2:N=1", 7)


def test_step_distribution_sums_to_one(ctx):
    pair = ctx.pair(8)
    dist = step_distribution(phi_kernel(pair), pair.anchor)
    assert dist.weights.sum() == pytest.approx(1.0)
    assert len(dist) == 6


def test_stationary_start_law(ctx, rng):
    pair = ctx.pair(8)
    idx = stationary_start(pair, rng, size=40000)
    counts = empirical(idx, len(pair.phi)) * len(idx)
    probs = pair.phi ** 2 / (pair.phi ** 2).sum()
    assert chi_square_pvalue(counts, probs) > 1e-3


def test_log_importance_weight(ctx):
    pair = ctx.pair(8)
    path = np.array([0, 1, 2])
    expected = np.log(pair.phi[2] / pair.phi[0]) - 2 * np.log(pair.lam)
    assert log_importance_weight(pair, path) == pytest.approx(expected)
