"""Acceptance criteria 1-10, one test each, at their stated tolerances."""

import json
import math
import pathlib
import time
import warnings

import numpy as np
import pytest
import yaml
from scipy.stats import special_ortho_group

from thresholdlab import cli
from thresholdlab.bsreg import (WEGOT_BOUND, apply_b, c0_constant, exponential_factor, find_omega, rtau_norm_bound,
                                wegot_value, y_momentum_norm)
from thresholdlab.diagnostics import tail_bound_probe
from thresholdlab.fewbody import StochasticVariationalSolver, critical_coupling_nb, subsystem_preconditions
from thresholdlab.jacobi import build_frame, kinematic_rotation, kinetic_check
from thresholdlab.model import PairPotential, SystemSpec
from thresholdlab.twobody import (DEFAULT_GRID, GridWarning, RadialGrid, bound_states, bs_count, bs_max_eigenvalue,
                                  critical_coupling_2b, defs_probe, resolvent_identity_residuals,
                                  resolvent_min_entry)

ROOT = pathlib.Path(__file__).resolve().parents[1]
G = PairPotential("gaussian", -1.0, 1.0)


@pytest.fixture(scope="module")
def lam_cr2():
    return critical_coupling_2b(G, DEFAULT_GRID).lambda_cr


def test_criterion_01_square_well_threshold(criterion):
    t0 = time.perf_counter()
    lam = critical_coupling_2b(PairPotential("square-well", -1.0, 1.0), RadialGrid(20.0, 2000)).lambda_cr
    elapsed = time.perf_counter() - t0
    criterion(1, f"square-well lambda_cr = {lam:.8f} (pi^2/4 = {math.pi ** 2 / 4:.8f}) in {elapsed:.2f} s", [
        ("|lambda_cr - pi^2/4| <= 1e-4", abs(lam - math.pi ** 2 / 4) <= 1e-4),
        ("runtime < 5 s", elapsed < 5.0),
    ])


def test_criterion_02_gaussian_threshold(criterion, oracles, lam_cr2):
    shooting = oracles["gaussian_lambda_cr_numerov"]
    mu = bs_max_eigenvalue(G, lam_cr2, 1e-3)
    criterion(2, f"gaussian lambda_cr = {lam_cr2:.8f} vs shooting {shooting:.8f}; BS max at k=1e-3 = {mu:.6f}", [
        ("relative agreement 1e-4", abs(lam_cr2 / shooting - 1.0) <= 1e-4),
        ("BS max = 1 +- 5e-3", abs(mu - 1.0) <= 5e-3),
    ])


BS_CASES = [
    (PairPotential("square-well", -1.0, 1.0), 5.0),
    (PairPotential("square-well", -1.0, 1.0), 30.0),
    (PairPotential("gaussian", -1.0, 1.0), 12.0),
    (PairPotential("screened-coulomb", -1.0, 1.0), 6.0),
    (PairPotential("gaussian-sum", 1.0, 1.0, ((2.0, 0.7), (-1.5, 1.4))), 4.0),
]


def test_criterion_03_uniform_bs_bound(criterion, lam_cr2):
    lam = 0.9 * lam_cr2
    omega = find_omega(G, lam)
    report = rtau_norm_bound(G, lam, [0.0, 0.1, 1.0], strict=False)
    grid = RadialGrid(30.0, 1500)
    mismatches = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridWarning)
        for v, coupling in BS_CASES:
            energies = bound_states(v, coupling, grid)
            for k in (0.1, 0.5, 1.0):
                mismatches += bs_count(v, coupling, k, grid) != sum(e < -k * k for e in energies)
    norms = ", ".join(f"{r.norm:.4f}" for r in report.rows)
    criterion(3, f"BS norms [{norms}] <= 1/(1+omega) = {1 / (1 + omega):.4f}; counting mismatches {mismatches}", [
        ("norm <= 1/(1+omega) + 1e-4", all(r.norm <= 1.0 / (1.0 + omega) + 1e-4 for r in report.rows)),
        ("stead residual < 1e-10", all(r.stead_residual < 1e-10 for r in report.rows)),
        ("BS counting matches bound_states on 15 cases", mismatches == 0),
    ])


def test_criterion_04_kernel_constants(criterion):
    f3 = exponential_factor()
    w0 = wegot_value(0.0)
    k_grid = [0.0, 1e-3, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0]
    values = [wegot_value(k) for k in k_grid]
    frame = build_frame((1.0, 1.0, 1.0))
    c1 = c0_constant(G, G, frame).c0
    c2 = c0_constant(G.scaled(2.0), G, frame).c0
    criterion(4, f"exp factor {f3:.9f}, wegot(0) {w0:.6f}, max wegot {max(values):.4f}, C0 ratio {c2 / c1:.12f}", [
        ("exp factor = 2 pi +- 1e-6", abs(f3 - 2 * math.pi) <= 1e-6),
        ("wegot(k->0) = 2 pi/3 +- 1e-3", abs(w0 - 2 * math.pi / 3) <= 1e-3),
        ("wegot <= 4 pi on 10 k values", all(v <= WEGOT_BOUND for v in values)),
        ("C0 doubles to 1e-10", abs(c2 / c1 - 2.0) <= 1e-10),
    ])


def test_criterion_05_structure_identities(criterion):
    masses = (1.0, 2.0, 3.0, 5.0)
    base = build_frame(masses)
    orth = kin = 0.0
    for order in [(1, 2, 0, 3), ((0, 1), (2, 3)), ((2, 3), (1, 0)), (3, 1, 2, 0)]:
        m = kinematic_rotation(base, build_frame(masses, order)).matrix
        orth = max(orth, np.abs(m @ m.T - np.eye(3)).max())
        kin = max(kin, kinetic_check(base, m))
    kin = max(kin, kinetic_check(base, special_ortho_group.rvs(3, random_state=1)))

    m = kinematic_rotation(build_frame(masses, (0, 1, 2, 3)), build_frame(masses, ((0, 1), (2, 3)))).matrix
    rng = np.random.default_rng(0)
    p = rng.uniform(-1.0, 1.0, size=(2000, 3, 3))
    f = rng.normal(size=2000)
    b_res = np.abs(apply_b(0.3, f, y_momentum_norm(p)) -
                   apply_b(0.3, f, y_momentum_norm(np.einsum("ij,njc->nic", m, p)))).max()

    mixed = PairPotential("gaussian-sum", 1.0, 1.0, ((2.0, 0.7), (-1.5, 1.4)))
    grid = RadialGrid(20.0, 400)
    star = max(max(resolvent_identity_residuals(mixed, 3.0, k, grid)) for k in (0.0, 0.5, 2.0))
    pos = min(resolvent_min_entry(mixed, 3.0, k, grid) for k in (0.0, 0.5, 2.0))
    criterion(5, f"orthogonality {orth:.1e}, kinetic {kin:.1e}, B(z) {b_res:.1e}, resolvent {star:.1e}, "
                 f"min entry {pos:.1e}", [
        ("rotation orthogonality < 1e-12", orth < 1e-12),
        ("kinetic-form residual < 1e-12", kin < 1e-12),
        ("B(z) frame invariance < 1e-10", b_res < 1e-10),
        ("resolvent identities < 1e-10", star < 1e-10),
        ("resolvent positivity >= -1e-12", pos >= -1e-12),
    ])


def test_criterion_06_definitions_probe(criterion, lam_cr2):
    at = defs_probe(G, lam_cr2, [0.01, 0.1])
    below = defs_probe(G, 0.95 * lam_cr2, [0.01, 0.1])
    top = max(max(r.def1, r.def2, r.def3) for r in at.rows)
    criterion(6, f"at lambda_cr max lowest eigenvalue {top:.3e}; witness at 0.95 lambda_cr "
                 f"{below.witness_min:.3e} (eps0 = {below.epsilon0})", [
        ("all perturbed operators negative at lambda_cr", top < 0),
        ("witness holds at 0.95 lambda_cr", below.witness_min is not None and below.witness_min >= -1e-8),
    ])


def test_criterion_07_three_body_threshold(criterion, lam_cr2):
    t0 = time.perf_counter()
    system = SystemSpec((1.0, 1.0, 1.0), {(0, 1): G, (0, 2): G, (1, 2): G})
    rep = critical_coupling_nb(system, StochasticVariationalSolver(seed=0), extra=20)
    pre = subsystem_preconditions(system, rep.lambda_cr)
    elapsed = time.perf_counter() - t0
    ratio = rep.lambda_cr / lam_cr2
    criterion(7, f"lambda_cr3/lambda_cr2 = {ratio:.5f}, +20 elements shift {rep.relative_shift:.1e}, "
                 f"preconditions {'pass' if pre.passed else 'fail'}, {elapsed:.1f} s", [
        ("ratio in (0.5, 1)", 0.5 < ratio < 1.0),
        ("preconditions pass", pre.passed),
        ("stable to 1e-3 under +20 elements", abs(rep.relative_shift) < 1e-3),
        ("runtime < 5 min", elapsed < 300.0),
    ])


def _absorption(config, out_dir):
    assert cli.run("threebody-absorption", str(config), str(out_dir)) in (0, 3)
    report = json.loads((out_dir / "threebody-absorption.json").read_text())
    rows = np.genfromtxt(out_dir / "threebody-absorption.csv", delimiter=",", names=True)
    return report, rows


@pytest.mark.slow
def test_criterion_08_absorption_dichotomy(criterion, tmp_path):
    t0 = time.perf_counter()
    absorbed, a_rows = _absorption(ROOT / "configs" / "absorbed.yaml", tmp_path / "absorbed")
    resonant, r_rows = _absorption(ROOT / "configs" / "resonant.yaml", tmp_path / "resonant")
    elapsed = time.perf_counter() - t0

    a_e, a_rho = np.abs(a_rows["energy"]), a_rows["rho_sq"]
    r_scaling = resonant["results"]["size_scaling"]
    p12 = r_rows["p_12_L5"]
    verdict = resonant["results"]["no_clustering"].get("verdicts", {}).get("12")
    criterion(8, f"absorbed: rho^2 ratio {a_rho.max() / a_rho.min():.3f} over |E| ratio "
                 f"{a_e.max() / a_e.min():.0f}; resonant: slope {r_scaling['slope']:.3f}, "
                 f"P12(5) {p12[0]:.3f} -> {p12[-1]:.3f} ({verdict}); {elapsed:.0f} s", [
        ("absorbed rho^2 varies by < x2", a_rho.max() / a_rho.min() < 2.0),
        ("absorbed |E| decreases by x100", a_e[0] / a_e[-1] >= 100.0),
        ("resonant slope = -1 +- 0.25", abs(r_scaling["slope"] + 1.0) <= 0.25),
        ("resonant P12(L=5) strictly decreasing", bool(np.all(np.diff(p12) < 0))),
        ("resonant pair verdict spreading", verdict == "spreading"),
        ("no bound failures", absorbed["status"] == "ok" and resonant["status"] == "ok"),
        ("runtime < 15 min", elapsed < 900.0),
    ])


def test_criterion_09_tail_probe(criterion):
    norms = tail_bound_probe(lambda r: np.exp(-r * r), [0.0, 2.0, 4.0, 8.0])
    criterion(9, "tail norms " + ", ".join(f"{n:.3e}" for n in norms), [
        ("non-increasing in q", all(b <= a for a, b in zip(norms, norms[1:]))),
        ("final/initial < 1e-2", norms[-1] / norms[0] < 1e-2),
    ])


# the tiny basis keeps this fast; its threshold is expectedly unconverged
@pytest.mark.filterwarnings("ignore:unstable N-body threshold:RuntimeWarning")
def test_criterion_10_reproducibility(criterion, tmp_path):
    import importlib.util

    cfg = {
        "system": {"masses": [1.0, 1.0, 1.0], "potentials": [{"kind": "gaussian", "depth": -1.0, "range": 1.0}]},
        "solver": {"seed": 4, "basis_size": 20, "grid": {"n": 400, "r_max": 20.0}},
        "experiment": {"approach": [0.01], "approach_grow": 5, "epsilons": [0.1, 0.05, 0.02], "grow_per_row": 2,
                       "extra": 5},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    csvs = []
    for name in ("a", "b"):
        assert cli.run("threebody-absorption", str(path), str(tmp_path / name)) == 0
        csvs.append((tmp_path / name / "threebody-absorption.csv").read_bytes())
    other = tmp_path / "c"
    assert cli.run("threebody-absorption", str(path), str(other), seed=5) == 0

    golden_dir = ROOT / "tests" / "golden"
    spec = importlib.util.spec_from_file_location("golden_cases", golden_dir / "cases.py")
    cases = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(cases)
    expected = json.loads(cases.GOLDEN.read_text())
    mismatched = [k for k, v in cases.compute().items() if expected.get(k) != v]
    cli_ok = cases.cli_csv(tmp_path / "golden") == cases.CLI_GOLDEN.read_bytes()
    criterion(10, f"seeded CSV identical: {csvs[0] == csvs[1]}; {len(expected)} golden cases, "
                  f"{len(mismatched)} mismatched; CLI golden {'matches' if cli_ok else 'differs'}", [
        ("identical seeds give byte-identical CSV", csvs[0] == csvs[1]),
        ("a different seed changes the CSV", (other / "threebody-absorption.csv").read_bytes() != csvs[0]),
        ("golden files match bit-exactly", not mismatched and len(expected) == len(cases.compute())),
        ("CLI golden CSV matches", cli_ok),
    ])
