import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.measures import chi_square_pvalue
from tiltcouple.slt import (FiniteChainSpec, PoissonField, SoftLocalTime, SupportError,
                            coupled_ranges, exact_mixing_time, iid_chain, load_chain, lower_count,
                            range_inclusion, save_chain, slt_simulate, stationary_law, upper_count)


def random_chain(seed, n):
    r = np.random.default_rng(seed)
    P = r.random((n, n)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    start = r.random(n) + 0.05
    return FiniteChainSpec(P, start / start.sum())


chains = st.builds(random_chain, st.integers(0, 10 ** 6), st.integers(2, 6))


@given(chains)
@settings(max_examples=40, deadline=None)
def test_stationary_law_is_invariant(chain):
    assert chain.invariance_defect() < 1e-10
    chain.verify()


def test_invalid_chains_rejected():
    with pytest.raises(ValueError):
        FiniteChainSpec(np.array([[0.5, 0.4], [0.5, 0.5]]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        FiniteChainSpec(np.eye(2), np.array([1.0, 1.0]))


def test_two_state_mixing_time():
    # P = [[1-a, a], [b, 1-b]]: worst TV at time t is max(a, b)/(a+b) |1-a-b|^t.
    a, b = 0.1, 0.2
    P = np.array([[1 - a, a], [b, 1 - b]])
    pi = stationary_law(P)
    assert np.allclose(pi, [b / (a + b), a / (a + b)])
    t = exact_mixing_time(P, pi)
    tv = lambda s: max(a, b) / (a + b) * abs(1 - a - b) ** s  # noqa: E731
    assert tv(t) <= 0.25 < tv(t - 1)


def test_iid_chain_mixes_in_one_step():
    pi = np.array([0.2, 0.3, 0.5])
    assert exact_mixing_time(iid_chain(pi).P, pi) == 1


def test_chain_file_roundtrip(tmp_path):
    chain = random_chain(3, 4)
    save_chain(chain, tmp_path / "k.txt")
    back = load_chain(tmp_path / "k.txt")
    assert np.array_equal(back.P, chain.P) and np.array_equal(back.start, chain.start)


def test_field_is_deterministic_and_sorted():
    mu = np.array([0.5, 1.0, 2.0])
    f1, f2 = PoissonField(mu, 7), PoissonField(mu, 7)
    for z in range(3):
        h = f1.heights(z, 40)
        assert np.all(np.diff(h) > 0)
        assert np.array_equal(h, f2.heights(z, 40))
        assert f1.count_below(z, h[17]) == 18
        assert f1.height(z, 0) == f1.first_heights[z]
    with pytest.raises(SupportError):
        PoissonField(np.array([1.0, 0.0]), 1)


def test_field_rates():
    mu = np.array([0.5, 2.0])
    f = PoissonField(mu, 11)
    level = 2000.0
    for z in range(2):
        n = f.count_below(z, level)
        assert abs(n - mu[z] * level) < 5 * np.sqrt(mu[z] * level)


@given(chains, st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_soft_local_time_invariants(chain, seed):
    mu = np.full(chain.n, 1.0 / chain.n)
    field = PoissonField(mu, seed)
    steps = 60
    states, G, engine = slt_simulate(chain, mu, field, steps, record_steps=range(steps + 1))
    # G only grows and every consumed point lies below G: consumed = points under G.
    for m in range(steps):
        assert np.all(engine.history[m + 1] >= engine.history[m] - 1e-12)
    counts = engine.counts_at(steps)
    for z in range(chain.n):
        assert field.count_below(z, G[z] * (1 + 1e-12)) == counts[z]
    assert [z for z, _ in engine.points] == states.tolist()


def test_one_step_law_matches_kernel():
    # The state chosen from s follows p(s, .) across independent fields.
    chain = random_chain(5, 4)
    mu = np.array([0.1, 0.2, 0.3, 0.4])
    dens = chain.density(mu)
    counts = np.zeros(4)
    for seed in range(6000):
        engine = SoftLocalTime(PoissonField(mu, seed), lambda s: dens(2 if s is None else s))
        counts[engine.step()] += 1
    assert chi_square_pvalue(counts, chain.P[2]) > 1e-3


def test_identical_chains_give_equal_ranges():
    chain = random_chain(9, 5)
    mu = chain.pi
    report, Y, Z = coupled_ranges(chain, chain, mu, PoissonField(mu, 3), 200, 0.1)
    assert Y.states == Z.states[:200]
    assert report.holds and report.left_points and report.right_points and report.methods_agree


def test_range_inclusion_counts():
    chain = iid_chain(np.array([0.5, 0.5]))
    mu = chain.pi
    field = PoissonField(mu, 1)
    a = SoftLocalTime(field, chain.density(mu)).run(30)
    b = SoftLocalTime(field, chain.density(mu)).run(40)
    res = range_inclusion(a, 30, b, 40)
    assert res["states"] and res["points"]


@given(st.integers(1, 10 ** 5), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_window_rounding(n, eps):
    lo, hi = lower_count(n, eps), upper_count(n, eps)
    assert 0 <= lo <= n <= hi
    assert lo <= (1 - eps) * n + 1e-9 and hi >= (1 + eps) * n - 1e-9
