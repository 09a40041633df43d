import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltcouple.chains import (CouplingError, YCoupling, ZCoupling, coalescence_times,
                               coupling_faithfulness, dense_kernel, density_columns,
                               entry_law_Y, entry_law_Z, interlacement_excursion_counts,
                               invariant_measure, mean_excursions_per_trajectory,
                               simulate_chain, slt_inputs, start_distributions, transition_row,
                               verify_invariance)


def test_invariance_exact(tables8):
    rep = verify_invariance(tables8)
    assert rep.worst <= 1e-10
    assert rep.exit_mass_defect <= 1e-12
    assert rep.row_sum_defect_Y <= 1e-10 and rep.row_sum_defect_Z <= 1e-10
    assert rep.dense_residual_Y is not None


def test_kernels_are_stochastic(tables8):
    for chain in ("Y", "Z"):
        P = dense_kernel(tables8, chain)
        assert np.abs(P.sum(axis=1) - 1).max() < 1e-10
        assert P.min() >= 0
        s = tables8.n_states // 2
        assert np.allclose(P[s], transition_row(tables8, s, chain))


def test_start_laws_are_probabilities(tables8):
    for name, law in start_distributions(tables8).items():
        assert law.min() >= 0 and law.sum() == pytest.approx(1.0), name


def test_entry_laws(tables8):
    for y in (0, tables8.n_exit - 1):
        assert entry_law_Y(tables8, y).sum() == pytest.approx(1.0)
        assert entry_law_Z(tables8, y).sum() == pytest.approx(1.0)
    assert np.array_equal(density_columns(tables8, "Y"), tables8.return_from_exit)


@given(st.data())
@settings(max_examples=50, deadline=None)
def test_state_flattening_roundtrip(tables8, data):
    x = data.draw(st.integers(0, tables8.n_entry - 1))
    y = data.draw(st.integers(0, tables8.n_exit - 1))
    assert tables8.split(tables8.state(x, y)) == (x, y)


def test_excursions_per_trajectory_two_routes(tables8, rng):
    exact = mean_excursions_per_trajectory(tables8)
    counts = interlacement_excursion_counts(tables8, 4000, rng)
    se = counts.std(ddof=1) / math.sqrt(len(counts))
    assert abs(counts.mean() - exact) < 4 * se


def test_simulated_chain_stays_in_support(tables8, rng):
    pi = invariant_measure(tables8)
    for chain in ("Y", "Z"):
        states = simulate_chain(tables8, chain, 200, rng)
        assert states.min() >= 0 and states.max() < tables8.n_states
        assert np.all(pi[states] > 0)


def test_forced_fresh_entry_coalesces_in_one_step(tables8, rng):
    coupling = ZCoupling(tables8, force_fresh=True)
    starts = rng.integers(0, tables8.n_states, size=(50, 2))
    times = coalescence_times(coupling, starts, 5, rng)
    assert np.all((times == 1) | ((times == 0) & (starts[:, 0] == starts[:, 1])))


def test_z_coupling_rejects_large_p(tables8):
    with pytest.raises(CouplingError):
        ZCoupling(tables8, p=min(1.0, 2 * float(tables8.psi_escape.min()) + 0.5))


def test_coupled_step_marginals(tables8, rng):
    pairs = [(0, tables8.n_states - 1)]
    for coupling, chain in ((YCoupling(tables8), "Y"), (ZCoupling(tables8), "Z")):
        res = coupling_faithfulness(coupling, chain, pairs, 3000, rng)
        assert res["min_pvalue"] > 1e-4


def test_slt_inputs_positive(tables8):
    inputs = slt_inputs(tables8)
    assert inputs.pi_min > 0 and inputs.g_min > 0 and inputs.rho_sup > 0
