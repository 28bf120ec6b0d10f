import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from thresholdlab.diagnostics import (PairObservableRequest, hyperradius_sq, no_clustering_report,
                                      pair_probabilities, pair_probability, size_scaling_report, tail_bound_probe)
from thresholdlab.fewbody import SpreadingProfile, make_state
from thresholdlab.model import PairPotential, SystemSpec
from thresholdlab.twobody import RadialGrid

G = PairPotential("gaussian", -1.0, 1.0)
SYSTEM = SystemSpec((1.0, 1.0, 1.0), {(0, 1): G, (0, 2): G, (1, 2): G})
PAIRS = ((0, 1), (0, 2), (1, 2))


def state(basis, coef=(1.0,)):
    raw = make_state(SYSTEM, basis, coef, symmetrize=False)
    return make_state(SYSTEM, basis, np.asarray(coef) / math.sqrt(raw.norm), symmetrize=False)


def single(a):
    return state([np.asarray(a, dtype=float)])


def profile(energies, rho, p_series, length=5.0):
    prof = SpreadingProfile((length,), PAIRS)
    for k, (e, r) in enumerate(zip(energies, rho)):
        probs = {(pair, length): p_series[pair][k] for pair in PAIRS}
        prof.rows.append({"lambda": 2.0 - 0.01 * k, "energy": e, "rho_sq": r, "pair_probs": probs})
    return prof


# -- pair probabilities -----------------------------------------------------------

def test_probability_saturates_at_large_length():
    s = single(np.eye(2))
    rms = math.sqrt(hyperradius_sq(s))
    assert pair_probability(s, (0, 1), 10 * rms) > 0.999


def test_probability_vanishes_at_zero_length():
    assert pair_probability(single(np.eye(2)), (0, 2), 0.0) == 0.0


def test_probability_matches_monte_carlo_single(oracles):
    mc = oracles["mc_single_gaussian_cdf"]
    p = pair_probability(single(mc["basis"]), tuple(mc["pair"]), mc["length"])
    assert p == pytest.approx(mc["pair_probability"], abs=1e-3)


def test_probability_matches_monte_carlo_two_elements(oracles):
    mc = oracles["mc_two_element_state"]
    s = state([np.array(b) for b in mc["basis"]], mc["coefficients"])
    assert pair_probability(s, tuple(mc["pair"]), mc["length"]) == pytest.approx(mc["pair_probability"], abs=1e-3)
    assert hyperradius_sq(s) == pytest.approx(mc["rho_sq"], rel=1e-3)


def test_unnormalized_state_rejected():
    raw = make_state(SYSTEM, [2.0 * np.eye(2)], [1.0], symmetrize=False)
    with pytest.raises(ValueError, match="normalised"):
        pair_probability(raw, (0, 1), 1.0)
    with pytest.raises(ValueError, match="normalised"):
        hyperradius_sq(raw)


def test_negative_length_rejected():
    with pytest.raises(ValueError):
        pair_probability(single(np.eye(2)), (0, 1), -1.0)


def test_request_validation_and_vector_form():
    with pytest.raises(ValueError):
        PairObservableRequest((1, 1), (1.0,))
    with pytest.raises(ValueError):
        PairObservableRequest((0, 1), (2.0, 1.0))
    s = single(np.eye(2))
    req = PairObservableRequest((1, 0), (1.0, 2.0))
    np.testing.assert_allclose(pair_probabilities(s, req), [pair_probability(s, (0, 1), 1.0),
                                                            pair_probability(s, (0, 1), 2.0)], rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-0.5, 0.5), st.floats(0.2, 3.0),
       st.lists(st.floats(0.0, 20.0), min_size=2, max_size=6))
def test_probability_monotone_in_length(a, b, c, lengths):
    s = single([[a, b * math.sqrt(a * c)], [b * math.sqrt(a * c), c]])
    p = pair_probability(s, (0, 2), np.sort(lengths))
    assert np.all(np.diff(p) >= -1e-12) and np.all((p >= 0) & (p <= 1 + 1e-12))


# -- hyperradius --------------------------------------------------------------------

def test_rho_sq_identity_element():
    assert hyperradius_sq(single(np.eye(2))) == pytest.approx(3.0, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 5.0))
def test_rho_sq_dilation(s):
    a = np.array([[1.2, 0.3], [0.3, 0.7]])
    assert hyperradius_sq(single(a / s ** 2)) == pytest.approx(s ** 2 * hyperradius_sq(single(a)), rel=1e-12)


def test_rho_sq_rotation_invariant():
    a, b = np.array([[1.2, 0.3], [0.3, 0.7]]), np.array([[0.4, -0.1], [-0.1, 0.2]])
    r = special_ortho_group.rvs(2, random_state=3)
    one = hyperradius_sq(state([a, b], [1.0, 0.5]))
    two = hyperradius_sq(state([r @ a @ r.T, r @ b @ r.T], [1.0, 0.5]))
    assert two == pytest.approx(one, rel=1e-10)


# -- no-clustering verdict ------------------------------------------------------------

E = -np.logspace(-2, -5, 6)


def test_verdicts_on_synthetic_profiles():
    p = {(0, 1): np.full(6, 0.6), (0, 2): np.linspace(0.6, 0.05, 6), (1, 2): np.array([0.6, 0.4, 0.5, 0.2, 0.1, 0.05])}
    rep = no_clustering_report(profile(E, np.ones(6), p))
    assert rep.verdicts == {(0, 1): "localized", (0, 2): "spreading", (1, 2): "inconclusive"}
    assert rep.length == 5.0 and rep.decades == pytest.approx(3.0)
    assert set(rep.to_dict()["verdicts"]) == {"12", "13", "23"}


def test_noise_band_tolerated():
    p = {pair: np.array([0.6, 0.4, 0.41, 0.2, 0.1, 0.05]) for pair in PAIRS}
    assert set(no_clustering_report(profile(E, np.ones(6), p)).verdicts.values()) == {"spreading"}


def test_verdict_uses_energy_order_not_row_order():
    p = {pair: np.linspace(0.6, 0.05, 6)[::-1] for pair in PAIRS}
    rep = no_clustering_report(profile(E[::-1], np.ones(6), p))
    assert set(rep.verdicts.values()) == {"spreading"}


def test_verdict_preconditions():
    p = {pair: np.full(6, 0.5) for pair in PAIRS}
    with pytest.raises(ValueError, match="at least"):
        no_clustering_report(profile(E[:3], np.ones(3), {k: v[:3] for k, v in p.items()}))
    with pytest.raises(ValueError, match="decades"):
        no_clustering_report(profile(-np.logspace(-2, -3, 6), np.ones(6), p))
    with pytest.raises(ValueError, match="zero energy"):
        no_clustering_report(profile(np.append(E[:5], 0.0), np.ones(6), p))


# -- size scaling ------------------------------------------------------------------------

def test_size_scaling_bounded():
    p = {pair: np.full(6, 0.5) for pair in PAIRS}
    rep = size_scaling_report(profile(E, np.linspace(10, 15, 6), p))
    assert rep.verdict == "bounded" and rep.energy_ratio == pytest.approx(1e3)


def test_size_scaling_halo():
    p = {pair: np.full(6, 0.5) for pair in PAIRS}
    rep = size_scaling_report(profile(E, 3.0 / np.abs(E), p))
    assert rep.verdict == "diverging" and rep.slope == pytest.approx(-1.0, abs=1e-12)


def test_size_scaling_undetermined():
    p = {pair: np.full(6, 0.5) for pair in PAIRS}
    assert size_scaling_report(profile(E, np.abs(E) ** -0.5, p)).verdict == "undetermined"


# -- tail probe --------------------------------------------------------------------------

SMALL = RadialGrid(20.0, 400)


def test_tail_probe_q0_is_operator_norm():
    f = lambda r: np.exp(-r * r)
    m = np.abs(f(SMALL.nodes))[:, None] * np.linalg.inv(SMALL.dense_laplacian() + np.eye(SMALL.n))
    assert tail_bound_probe(f, [0.0], SMALL)[0] == pytest.approx(np.linalg.norm(m, 2), rel=1e-10)


def test_tail_probe_zero_function():
    assert tail_bound_probe(lambda r: 0.0 * r, [0.0, 1.0], SMALL) == [0.0, 0.0]


def test_tail_probe_gaussian_decay():
    norms = tail_bound_probe(lambda r: np.exp(-r * r), [0.0, 2.0, 4.0, 8.0])
    assert all(b <= a for a, b in zip(norms, norms[1:]))
    assert norms[-1] / norms[0] < 1e-2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_tail_probe_non_increasing_for_random_f(seed):
    values = np.random.default_rng(seed).normal(size=SMALL.n)
    norms = tail_bound_probe(lambda r: values, np.linspace(0.0, 20.0, 9), SMALL)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
