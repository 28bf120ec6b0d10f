import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thresholdlab.diagnostics import hyperradius_sq, pair_probability
from thresholdlab.fewbody import (BasisError, StochasticVariationalSolver, absorption_trace, assemble_matrices,
                                  critical_coupling_nb, expectation_rho_sq, ground_state, grow_basis, make_state,
                                  subsystem_preconditions, symmetry_group)
from thresholdlab.model import PairPotential, SystemSpec, zero_potential
from thresholdlab.twobody import DEFAULT_GRID, critical_coupling_2b

G = PairPotential("gaussian", -1.0, 1.0)


def three_bosons(coupling, v=G, **kw):
    return SystemSpec((1.0, 1.0, 1.0), {(0, 1): v, (0, 2): v, (1, 2): v}, coupling, **kw)


def free3():
    z = zero_potential()
    return SystemSpec((1.0, 1.0, 1.0), {(0, 1): z, (0, 2): z, (1, 2): z})


@pytest.fixture(scope="module")
def lam_cr2():
    return critical_coupling_2b(G, DEFAULT_GRID).lambda_cr


@st.composite
def spd2(draw):
    l = np.array([[draw(st.floats(0.3, 2.0)), 0.0], [draw(st.floats(-1.0, 1.0)), draw(st.floats(0.3, 2.0))]])
    return l @ l.T


def test_overlap_and_kinetic_identity_elements():
    h, s = assemble_matrices(free3(), [np.eye(2)], symmetrize=False)
    assert s[0, 0] == pytest.approx(math.pi ** 3, rel=1e-14)
    assert h[0, 0] == pytest.approx(3 * s[0, 0], rel=1e-14)


def test_matrix_elements_match_monte_carlo(oracles):
    mc = oracles["mc_matrix_elements"]
    h, s = assemble_matrices(free3(), [mc["a"], mc["b"]], symmetrize=False)
    assert s[0, 1] == pytest.approx(mc["overlap"], rel=0.01)
    assert h[0, 1] == pytest.approx(mc["kinetic"], rel=0.01)


def test_non_spd_rejected():
    with pytest.raises(BasisError):
        assemble_matrices(free3(), [np.array([[1.0, 2.0], [2.0, 1.0]])])
    with pytest.raises(BasisError):
        assemble_matrices(free3(), [np.array([[1.0, 0.5], [0.2, 1.0]])])


def test_ill_conditioned_overlap_flagged():
    basis = [np.eye(2), np.eye(2) * (1 + 1e-9)]
    with pytest.warns(RuntimeWarning, match="condition number"):
        assemble_matrices(three_bosons(1.0), basis)


def test_filtering_keeps_ground_state_finite():
    basis = [np.eye(2), np.eye(2) * (1 + 1e-9), np.eye(2) * 0.3]
    res = ground_state(three_bosons(2.0), basis)
    assert res.n_filtered >= 1 and np.isfinite(res.energy)


def test_free_hamiltonian_positive():
    basis = grow_basis(three_bosons(2.0), None, seed=3, target_size=8)
    assert ground_state(free3(), basis).energy > 0


@settings(max_examples=25, deadline=None)
@given(st.lists(spd2(), min_size=1, max_size=5), spd2())
def test_variational_principle_on_enlargement(basis, extra):
    system = three_bosons(3.0)
    e1 = ground_state(system, basis).energy
    e2 = ground_state(system, basis + [extra]).energy
    assert e2 <= e1 + 1e-9 * abs(e1)


def test_two_body_reduction_matches_numerov(oracles):
    lam = 1.5 * oracles["gaussian_lambda_cr_numerov"]
    solver = StochasticVariationalSolver(n_basis=30, seed=0).fit(SystemSpec((1.0, 1.0), {(0, 1): G}, lam))
    assert solver.energy_ == pytest.approx(oracles["gaussian_ground_energy_numerov_1p5"], rel=1e-5)


def test_grow_basis_is_deterministic():
    system = three_bosons(3.0)
    a = grow_basis(system, None, seed=11, target_size=15)
    b = grow_basis(system, None, seed=11, target_size=15)
    assert a.tobytes() == b.tobytes()
    assert grow_basis(system, None, seed=12, target_size=15).tobytes() != a.tobytes()


def test_grow_basis_rejects_shrinking():
    system = three_bosons(3.0)
    with pytest.raises(ValueError):
        grow_basis(system, grow_basis(system, None, seed=1, target_size=5), seed=1, target_size=3)


def test_selection_energies_non_increasing():
    solver = StochasticVariationalSolver(n_basis=40, seed=2).fit(three_bosons(3.0))
    e = np.array(solver.energies_)
    assert np.all(np.diff(e) <= 1e-9 * np.abs(e[1:]))


def test_self_convergence_against_large_reference(oracles):
    ref = oracles["three_boson_reference_energy_1p2"]
    solver = StochasticVariationalSolver(n_basis=40, seed=0).fit(three_bosons(ref["coupling"]))
    assert solver.energy_ == pytest.approx(ref["energy"], rel=1e-3)


def test_solver_params_round_trip():
    s = StochasticVariationalSolver(n_basis=12, seed=4)
    assert s.set_params(pool_size=5).get_params()["pool_size"] == 5
    with pytest.raises(ValueError):
        s.set_params(bogus=1)


def test_symmetry_group_respects_pins():
    assert len(symmetry_group(three_bosons(1.0))) == 6
    assert len(symmetry_group(three_bosons(1.0, pinned={(0, 1): 2.0}))) == 2
    other = SystemSpec((1.0, 1.0, 2.0), {(0, 1): G, (0, 2): G, (1, 2): G})
    assert len(symmetry_group(other)) == 2


def test_preconditions_pass_for_subcritical_pairs(lam_cr2):
    rep = subsystem_preconditions(three_bosons(1.0), 0.9 * lam_cr2)
    assert rep.passed and rep.exhaustive and rep.offending == []


def test_preconditions_name_the_resonant_pair(lam_cr2):
    rep = subsystem_preconditions(three_bosons(1.0, pinned={(1, 2): lam_cr2}), 0.8 * lam_cr2)
    assert not rep.passed
    assert rep.offending == [(1, 2)]
    assert "pair (2,3)" in rep.message and "resonant" in rep.message


def test_preconditions_vacuous_for_two_particles():
    assert subsystem_preconditions(SystemSpec((1.0, 1.0), {(0, 1): G}, 10.0)).passed


def test_threshold_halves_when_potential_doubles():
    one = critical_coupling_nb(three_bosons(1.0), StochasticVariationalSolver(n_basis=30, seed=5),
                               extra=5, lambda_fit=3.0)
    two = critical_coupling_nb(three_bosons(1.0, v=G.scaled(2.0)), StochasticVariationalSolver(n_basis=30, seed=5),
                               extra=5, lambda_fit=1.5)
    assert two.lambda_cr == pytest.approx(one.lambda_cr / 2, rel=1e-8)


def test_threshold_brackets_zero_energy():
    solver = StochasticVariationalSolver(n_basis=30, seed=5)
    rep = critical_coupling_nb(three_bosons(1.0), solver, extra=5, lambda_fit=3.0)
    assert solver.energy_at(rep.lambda_hi).energy < 0 <= solver.energy_at(rep.lambda_lo).energy
    assert abs(rep.energy_at_cr) < 1e-6


def test_threshold_below_hyperradial_oracle(oracles, lam_cr2):
    # the single-channel estimate is itself an upper bound on the true threshold
    hyp = oracles["hyperradial_k0_lambda_cr3"]
    assert hyp / lam_cr2 < 1.0
    rep = critical_coupling_nb(three_bosons(1.0), StochasticVariationalSolver(n_basis=60, seed=0))
    assert rep.lambda_cr < hyp


def test_scaling_covariance():
    s = 1.7
    solver = StochasticVariationalSolver(n_basis=25, seed=9).fit(three_bosons(3.0))
    basis = solver.basis_
    st1 = solver.state_
    dilated = three_bosons(3.0 / s ** 2, v=G.dilated(s))
    res = ground_state(dilated, basis / s ** 2)
    assert res.energy == pytest.approx(st1.energy / s ** 2, rel=1e-6)
    st2 = make_state(dilated, basis / s ** 2, res.coefficients)
    assert expectation_rho_sq(st2) == pytest.approx(s ** 2 * expectation_rho_sq(st1), rel=1e-6)


def test_permutation_symmetry_of_pair_probabilities():
    state = StochasticVariationalSolver(n_basis=20, seed=1).fit(three_bosons(3.0)).state_
    p = [pair_probability(state, pair, 2.0) for pair in [(0, 1), (0, 2), (1, 2)]]
    assert max(p) - min(p) < 1e-8


def test_trace_rejects_increasing_schedule():
    with pytest.raises(ValueError):
        absorption_trace(three_bosons(3.0), [3.0, 3.5])


def test_trace_rows_and_truncation():
    solver = StochasticVariationalSolver(n_basis=30, seed=0).fit(three_bosons(3.0))
    with pytest.warns(RuntimeWarning, match="truncated"):
        prof = absorption_trace(three_bosons(3.0), [3.0, 2.6, 2.3, 1.0, 0.5], solver=solver,
                                l_values=(2.0, 5.0), grow_per_row=3)
    assert len(prof.rows) == 3
    assert np.all(np.diff(prof.lambdas) < 0) and np.all(prof.energies < 0)
    for row in prof.rows:
        assert all(0.0 <= p <= 1.0 for p in row["pair_probs"].values())
    assert prof.monotonicity_violations == []
    assert prof.columns() == ["lambda", "energy", "rho_sq", "p_12_L2", "p_12_L5", "p_13_L2", "p_13_L5",
                              "p_23_L2", "p_23_L5"]
    assert len(prof.table()[0]) == len(prof.columns())
