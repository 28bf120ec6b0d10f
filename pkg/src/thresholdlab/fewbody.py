"""Correlated-Gaussian variational solver for the N-body Hamiltonian.

Basis functions are ``exp(-1/2 xi^T (A x I_3) xi)`` in mass-scaled Jacobi
coordinates, optionally summed over the permutations that leave the system
invariant. All matrix elements are closed-form: a pair potential enters
only through the variance of the pair separation under the product of two
Gaussians (:meth:`PairPotential.gaussian_average`).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np
from scipy.linalg import eigh, eigvalsh

from .jacobi import JacobiFrame, build_frame, kinematic_rotation, pair_separation_map
from .model import SystemSpec, maxwell_cdf
from .twobody import DEFAULT_GRID, RadialGrid, ThresholdReport, bs_max_eigenvalue

log = logging.getLogger(__name__)

# relative cutoff on overlap eigenvalues; directions below are treated as linearly dependent
FILTER_RTOL = 1e-12
CONDITION_LIMIT = 1e14
# a candidate whose component orthogonal to the current span has squared norm below this is skipped
DEPENDENCE_TOL = 1e-9
# allowed relative energy rise under basis growth (round-off of the filtered eigensolve)
MONOTONE_RTOL = 1e-9


class BasisError(ValueError):
    """A basis matrix is not symmetric positive definite."""


@dataclass(frozen=True)
class SpectralResult:
    energy: float
    coefficients: np.ndarray
    basis_size: int
    overlap_condition: float
    n_filtered: int = 0


@dataclass(eq=False)
class GaussianState:
    """Normalised expansion ``sum_a c_a phi_a`` over (symmetrised) correlated Gaussians."""

    frame: JacobiFrame
    basis: np.ndarray
    coefficients: np.ndarray
    symmetry: np.ndarray
    energy: float | None = None
    perms: tuple = ()

    def __post_init__(self):
        norm = float(self.coefficients @ _overlap(self.basis, self.basis, self.symmetry) @ self.coefficients)
        self.norm = norm


@dataclass
class SpreadingProfile:
    """Rows of ``(lambda, energy, rho_sq, pair_probs)`` along a coupling schedule."""

    l_values: tuple[float, ...]
    pairs: tuple[tuple[int, int], ...]
    rows: list[dict] = field(default_factory=list)
    # (lambda, energy before growth, energy after) wherever basis growth raised the energy
    monotonicity_violations: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r["lambda"] for r in self.rows])

    @property
    def energies(self) -> np.ndarray:
        return np.array([r["energy"] for r in self.rows])

    @property
    def rho_sq(self) -> np.ndarray:
        return np.array([r["rho_sq"] for r in self.rows])

    def pair_probability(self, pair, length) -> np.ndarray:
        return np.array([r["pair_probs"][(tuple(pair), float(length))] for r in self.rows])

    def columns(self) -> list[str]:
        cols = ["lambda", "energy", "rho_sq"]
        for i, j in self.pairs:
            for length in self.l_values:
                cols.append(f"p_{i + 1}{j + 1}_L{length:g}")
        return cols

    def table(self) -> list[list[float]]:
        out = []
        for r in self.rows:
            line = [r["lambda"], r["energy"], r["rho_sq"]]
            line += [r["pair_probs"][(p, float(L))] for p in self.pairs for L in self.l_values]
            out.append(line)
        return out


# -- geometry -----------------------------------------------------------------

def symmetry_group(system: SystemSpec) -> list[tuple[int, ...]]:
    """Particle permutations preserving the masses, pair potentials and pinned couplings."""
    n = system.n_particles
    group = []
    for perm in permutations(range(n)):
        if any(system.masses[perm[i]] != system.masses[i] for i in range(n)):
            continue
        image = {(i, j): tuple(sorted((perm[i], perm[j]))) for i, j in system.pairs}
        if all(system.potentials[image[p]] == system.potentials[p]
               and system.pinned.get(image[p]) == system.pinned.get(p) for p in system.pairs):
            group.append(perm)
    return group


def _geometry(system: SystemSpec, symmetrize: bool):
    frame = build_frame(system.masses)
    w = np.array([pair_separation_map(frame, p) for p in system.pairs])
    perms = symmetry_group(system) if symmetrize else [tuple(range(system.n_particles))]
    q = np.array([frame.permutation_map(p) for p in perms])
    return frame, w, q, tuple(perms)


def _frame_rotations(frame: JacobiFrame) -> list[np.ndarray]:
    """Maps from ``frame`` to the Jacobi frames built on each pair (chain ordering)."""
    n = frame.n_particles
    out = []
    for i, j in combinations(range(n), 2):
        rest = [k for k in range(n) if k not in (i, j)]
        other = build_frame(frame.masses, [i, j] + rest)
        out.append(kinematic_rotation(frame, other).matrix)
    return out


def check_spd(a: np.ndarray) -> None:
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[None]
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=1e-12, atol=0.0):
        raise BasisError("correlation matrix is not symmetric")
    if np.any(np.linalg.eigvalsh(a) <= 1e-10):
        raise BasisError("correlation matrix is not positive definite")


def _pair_products(a, b, q):
    """Stacked ``C = A_i + Q^T B_j Q`` with inverses and determinants, shape ``(G, Ka, Kb, ...)``."""
    bq = np.einsum("gki,bkl,glj->gbij", q, b, q)
    c = a[None, :, None] + bq[:, None]
    return bq, np.linalg.inv(c), np.linalg.det(c)


def _overlap_from(det, dim):
    return (2.0 * math.pi) ** (1.5 * dim) * det ** -1.5


def _overlap(a, b, q):
    _, _, det = _pair_products(a, b, q)
    return _overlap_from(det, a.shape[-1]).sum(axis=0)


def _blocks(a, b, q, w, potentials):
    """Raw ``S``, ``T`` and per-pair potential blocks between two sets of elements."""
    dim = a.shape[-1]
    bq, cinv, det = _pair_products(a, b, q)
    s = _overlap_from(det, dim)
    t = 3.0 * np.einsum("aij,gabjk,gbki->gab", a, cinv, bq) * s
    sig2 = np.einsum("pi,gabij,pj->pgab", w, cinv, w)
    v = np.stack([pot.gaussian_average(sig2[k]) * s for k, pot in enumerate(potentials)])
    return s.sum(0), t.sum(0), v.sum(1)


# -- matrices and spectra -----------------------------------------------------

class _Workspace:
    """Raw overlap, kinetic and per-pair unit-coupling potential matrices for a growing basis."""

    def __init__(self, system: SystemSpec, symmetrize: bool = True):
        self.system = system
        self.frame, self.w, self.q, self.perms = _geometry(system, symmetrize)
        self.potentials = [system.potentials[p] for p in system.pairs]
        self.dim = system.n_particles - 1
        self.sampling = (self.w, _frame_rotations(self.frame))
        self.basis = np.zeros((0, self.dim, self.dim))
        self.s = np.zeros((0, 0))
        self.t = np.zeros((0, 0))
        self.v = np.zeros((len(self.potentials), 0, 0))

    def rows(self, cand):
        """Blocks between candidates and the current basis, plus candidate diagonals."""
        s, t, v = _blocks(cand, self.basis, self.q, self.w, self.potentials)
        cand_diag = [_blocks(c[None], c[None], self.q, self.w, self.potentials) for c in cand]
        s0 = np.array([d[0][0, 0] for d in cand_diag])
        t0 = np.array([d[1][0, 0] for d in cand_diag])
        v0 = np.array([d[2][:, 0, 0] for d in cand_diag]).T
        return s, t, v, s0, t0, v0

    def extend(self, cand):
        cand = np.asarray(cand).reshape(-1, self.dim, self.dim)
        s, t, v, _, _, _ = self.rows(cand)
        ss, tt, vv = _blocks(cand, cand, self.q, self.w, self.potentials)
        self.s = np.block([[self.s, s.T], [s, ss]])
        self.t = np.block([[self.t, t.T], [t, tt]])
        self.v = np.stack([np.block([[self.v[k], v[k].T], [v[k], vv[k]]])
                           for k in range(len(self.potentials))])
        self.basis = np.concatenate([self.basis, cand])

    def replace(self, index, element):
        keep = np.arange(len(self.basis)) != index
        basis = np.concatenate([self.basis[keep], element[None]])
        self.basis = np.zeros((0, self.dim, self.dim))
        self.s = self.t = np.zeros((0, 0))
        self.v = np.zeros((len(self.potentials), 0, 0))
        self.extend(basis)

    def hamiltonian(self, coupling):
        lam = self.system.pair_couplings(coupling)
        return self.t + np.tensordot(lam, self.v, axes=1)

    def solve(self, coupling):
        return _lowest(self.hamiltonian(coupling), self.s)


def _filtered_transform(s):
    d = 1.0 / np.sqrt(np.diag(s))
    sn = s * d[:, None] * d[None, :]
    evals, evecs = np.linalg.eigh(sn)
    keep = evals > FILTER_RTOL * evals[-1]
    x = evecs[:, keep] / np.sqrt(evals[keep])
    cond = evals[-1] / evals[keep][0]
    return d[:, None] * x, cond, int((~keep).sum())


def _lowest(h, s) -> SpectralResult:
    if len(s) == 0:
        raise BasisError("empty basis")
    x, cond, dropped = _filtered_transform(s)
    hp = x.T @ h @ x
    evals, evecs = eigh(0.5 * (hp + hp.T))
    coef = x @ evecs[:, 0]
    return SpectralResult(float(evals[0]), coef, len(s), float(cond), dropped)


def assemble_matrices(system: SystemSpec, basis, symmetrize: bool = True):
    """Hamiltonian and overlap matrices of ``system`` in a correlated-Gaussian basis.

    Parameters
    ----------
    system : SystemSpec
    basis : array_like, shape (K, N-1, N-1)
        Correlation matrices (symmetric positive definite).
    symmetrize : bool
        Sum each element over the permutations leaving the system invariant.

    Returns
    -------
    h_matrix, s_matrix : ndarray, shape (K, K)
    """
    basis = np.asarray(basis, dtype=float)
    dim = system.n_particles - 1
    basis = basis.reshape(-1, dim, dim)
    check_spd(basis)
    ws = _Workspace(system, symmetrize)
    ws.extend(basis)
    cond = np.linalg.cond(ws.s * np.outer(*(2 * [1.0 / np.sqrt(np.diag(ws.s))])))
    if cond > CONDITION_LIMIT:
        warnings.warn(f"overlap matrix condition number {cond:.3g} exceeds {CONDITION_LIMIT:g}",
                      RuntimeWarning, stacklevel=2)
    return ws.hamiltonian(system.coupling), ws.s


def ground_state(system: SystemSpec, basis, symmetrize: bool = True) -> SpectralResult:
    """Lowest generalized eigenvalue of ``H c = E S c`` with ``c^T S c = 1``.

    Near-linear dependence is removed by discarding overlap eigen-directions
    below ``FILTER_RTOL`` of the largest; the number dropped is reported.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        h, s = assemble_matrices(system, basis, symmetrize)
    res = _lowest(h, s)
    if res.n_filtered:
        log.info("dropped %d near-dependent overlap directions", res.n_filtered)
    return res


def make_state(system: SystemSpec, basis, coefficients, symmetrize: bool = True,
               energy: float | None = None) -> GaussianState:
    frame, _, q, perms = _geometry(system, symmetrize)
    return GaussianState(frame, np.asarray(basis, dtype=float), np.asarray(coefficients, dtype=float),
                         q, energy, perms)


# -- stochastic basis selection -----------------------------------------------

def _sample_candidates(rng, geo, count, b_min, b_max):
    """Random correlation matrices with log-uniform length scales in ``[b_min, b_max]``.

    Half the candidates are diagonal in a randomly chosen Jacobi frame with
    independent widths per coordinate (dimer-plus-spectator shapes); the
    other half are ``sum_pairs w w^T / b^2`` with pair widths scattered by a
    factor of up to e around a common scale (compact and diffuse shapes).
    """
    w, frames = geo
    lo, hi = math.log(b_min), math.log(b_max)
    n_pairs, dim = w.shape
    out = np.empty((count, dim, dim))
    for c in range(count):
        if c % 2 == 0:
            rot = frames[rng.integers(len(frames))]
            widths = np.exp(rng.uniform(lo, hi, size=dim))
            out[c] = rot.T @ np.diag(widths ** -2.0) @ rot
        else:
            scale = rng.uniform(lo, hi)
            widths = np.exp(np.clip(scale + rng.uniform(-1.0, 1.0, size=n_pairs), lo, hi))
            out[c] = np.einsum("p,pi,pj->ij", widths ** -2.0, w, w)
    return out


def _candidate_energies(ws, x, evals, cand, coupling):
    """Lowest energy after appending each candidate (bordered-matrix update)."""
    s, t, v, s0, t0, v0 = ws.rows(cand)
    lam = ws.system.pair_couplings(coupling)
    h = t + np.tensordot(lam, v, axes=1)
    h0 = t0 + lam @ v0
    out = np.full(len(cand), np.inf)
    for c in range(len(cand)):
        if len(ws.basis) == 0:
            out[c] = h0[c] / s0[c]
            continue
        norm = math.sqrt(s0[c])
        sig = x.T @ s[c] / norm
        eta = x.T @ h[c] / norm
        r2 = 1.0 - sig @ sig
        if r2 < DEPENDENCE_TOL:
            continue
        g = (eta - evals * sig) / math.sqrt(r2)
        hh = (h0[c] / s0[c] - 2.0 * sig @ eta + sig @ (evals * sig)) / r2
        m = np.diag(np.append(evals, hh))
        m[-1, :-1] = m[:-1, -1] = g
        out[c] = eigvalsh(m, subset_by_index=[0, 0])[0]
    return out


def _eigenbasis(ws, coupling):
    x, _, _ = _filtered_transform(ws.s)
    hp = x.T @ ws.hamiltonian(coupling) @ x
    evals, evecs = eigh(0.5 * (hp + hp.T))
    return x @ evecs, evals


class StochasticVariationalSolver:
    """Grow a correlated-Gaussian basis by stochastic selection, then solve for the ground state.

    Each step draws ``pool_size`` random candidates (pair widths log-uniform
    in ``[b_min, b_max]``) and keeps the one lowering the ground energy most.
    ``refine_cycles`` sweeps then try to replace every element by a better
    random one. Fitted attributes carry a trailing underscore.
    """

    def __init__(self, n_basis: int = 60, pool_size: int = 20, b_min: float = 0.1,
                 b_max: float = 50.0, seed: int = 0, refine_cycles: int = 0,
                 symmetrize: bool = True):
        self.n_basis = n_basis
        self.pool_size = pool_size
        self.b_min = b_min
        self.b_max = b_max
        self.seed = seed
        self.refine_cycles = refine_cycles
        self.symmetrize = symmetrize

    def get_params(self) -> dict:
        return {k: getattr(self, k) for k in ("n_basis", "pool_size", "b_min", "b_max",
                                             "seed", "refine_cycles", "symmetrize")}

    def set_params(self, **params) -> "StochasticVariationalSolver":
        for k, v in params.items():
            if k not in self.get_params():
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, system: SystemSpec, basis=None) -> "StochasticVariationalSolver":
        self.system_ = system
        self.rng_ = np.random.default_rng(self.seed)
        self._ws = _Workspace(system, self.symmetrize)
        if basis is not None and len(basis):
            basis = np.asarray(basis, dtype=float).reshape(-1, self._ws.dim, self._ws.dim)
            check_spd(basis)
            self._ws.extend(basis)
        self.energies_ = []
        self._grow(self.n_basis)
        for _ in range(self.refine_cycles):
            self._refine()
        self._finish()
        return self

    def grow(self, extra: int) -> "StochasticVariationalSolver":
        """Append ``extra`` more elements, continuing the same random stream."""
        self._grow(len(self._ws.basis) + extra)
        self._finish()
        return self

    def _grow(self, target):
        ws, coupling = self._ws, self.system_.coupling
        while len(ws.basis) < target:
            if len(ws.basis):
                x, evals = _eigenbasis(ws, coupling)
            else:
                x, evals = np.zeros((0, 0)), np.zeros(0)
            cand = _sample_candidates(self.rng_, ws.sampling, self.pool_size, self.b_min,
                                      self._upper_width(len(ws.basis)))
            energies = _candidate_energies(ws, x, evals, cand, coupling)
            best = int(np.argmin(energies))
            if not np.isfinite(energies[best]):
                continue
            ws.extend(cand[best])
            self.energies_.append(float(energies[best]))

    def _upper_width(self, k):
        # the width window opens geometrically over the first half of the basis;
        # otherwise diffuse functions win every early greedy step and compact
        # structure is never built
        ramp = max(1, self.n_basis // 2)
        frac = min(1.0, (k + 1) / ramp)
        start = min(self.b_max, 10.0 * self.b_min)
        return start * (self.b_max / start) ** frac

    def _refine(self):
        ws, coupling = self._ws, self.system_.coupling
        for k in range(len(ws.basis)):
            current = ws.solve(coupling).energy
            keep = np.arange(len(ws.basis)) != k
            trial = _Workspace(self.system_, self.symmetrize)
            trial.extend(ws.basis[keep])
            x, evals = _eigenbasis(trial, coupling)
            cand = _sample_candidates(self.rng_, ws.sampling, self.pool_size, self.b_min, self.b_max)
            energies = _candidate_energies(trial, x, evals, cand, coupling)
            best = int(np.argmin(energies))
            if energies[best] < current:
                trial.extend(cand[best])
                self._ws = ws = trial

    def _finish(self):
        ws = self._ws
        res = ws.solve(self.system_.coupling)
        self.basis_ = ws.basis.copy()
        self.result_ = res
        self.energy_ = res.energy
        self.state_ = GaussianState(ws.frame, self.basis_, res.coefficients, ws.q, res.energy, ws.perms)

    def retarget(self, coupling: float) -> "StochasticVariationalSolver":
        """Make later growth optimise the ground state at ``coupling``."""
        self.system_ = self.system_.with_coupling(coupling)
        return self

    def energy_at(self, coupling: float) -> SpectralResult:
        """Ground state of the frozen basis at another coupling."""
        return self._ws.solve(coupling)

    def state_at(self, coupling: float) -> GaussianState:
        res = self._ws.solve(coupling)
        return GaussianState(self._ws.frame, self._ws.basis.copy(), res.coefficients, self._ws.q,
                             res.energy, self._ws.perms)


def grow_basis(system: SystemSpec, basis, seed: int, target_size: int, *, pool_size: int = 20,
               b_min: float = 0.1, b_max: float = 50.0, symmetrize: bool = True) -> np.ndarray:
    """Extend ``basis`` to ``target_size`` elements by stochastic selection (deterministic per seed)."""
    dim = system.n_particles - 1
    basis = np.zeros((0, dim, dim)) if basis is None else np.asarray(basis, dtype=float).reshape(-1, dim, dim)
    if target_size < len(basis):
        raise ValueError("target_size is smaller than the current basis")
    solver = StochasticVariationalSolver(n_basis=target_size, pool_size=pool_size, b_min=b_min,
                                         b_max=b_max, seed=seed, symmetrize=symmetrize)
    return solver.fit(system, basis).basis_


# -- observables --------------------------------------------------------------

def _state_blocks(state: GaussianState):
    bq, cinv, det = _pair_products(state.basis, state.basis, state.symmetry)
    return cinv, _overlap_from(det, state.basis.shape[-1])


def expectation_pair_cdf(state: GaussianState, pair, lengths) -> np.ndarray:
    """``<psi| chi_L(r_i - r_j) |psi> / <psi|psi>`` for each ``L`` in ``lengths``.

    For a symmetrised basis the pair operator is averaged over its orbit
    under the symmetry group, which is its exact expectation in the
    symmetrised state.
    """
    i, j = pair
    images = [(p[i], p[j]) for p in state.perms] or [(i, j)]
    cinv, s = _state_blocks(state)
    c = state.coefficients
    out = np.zeros(len(np.atleast_1d(lengths)))
    for img in images:
        w = pair_separation_map(state.frame, img)
        sig2 = np.einsum("i,gabij,j->gab", w, cinv, w)
        for k, length in enumerate(np.atleast_1d(lengths)):
            cdf = maxwell_cdf(length, sig2) if length > 0 else np.zeros_like(sig2)
            out[k] += c @ (cdf * s).sum(0) @ c
    return out / (len(images) * state.norm)


def expectation_rho_sq(state: GaussianState) -> float:
    """``<sum_k |xi_k|^2>`` for the normalised state."""
    cinv, s = _state_blocks(state)
    tr = 3.0 * np.trace(cinv, axis1=-2, axis2=-1)
    c = state.coefficients
    return float(c @ (tr * s).sum(0) @ c / state.norm)


# -- thresholds and the absorption experiment -------------------------------------

@dataclass(frozen=True)
class PairCheck:
    pair: tuple[int, int]
    coupling: float
    bs_max: float
    status: str


@dataclass(frozen=True)
class PreconditionReport:
    passed: bool
    pairs: tuple[PairCheck, ...]
    message: str
    exhaustive: bool = True

    @property
    def offending(self) -> list[tuple[int, int]]:
        return [c.pair for c in self.pairs if c.status != "subcritical"]


def subsystem_preconditions(system: SystemSpec, coupling: float | None = None, tol: float = 1e-3,
                            grid: RadialGrid = DEFAULT_GRID) -> PreconditionReport:
    """Check that every pair is subcritical (no bound state, no zero-energy resonance).

    Each pair is reduced to ``-Laplacian + lam V(x / sqrt(2 mu))`` and
    classified by its largest zero-momentum Birman-Schwinger eigenvalue
    ``mu``; the verdict passes only if ``mu < 1 - tol`` for every pair. For
    three particles the pairs are all proper subsystems; for more particles
    the check is necessary but not exhaustive. Two particles pass vacuously.
    """
    if system.n_particles == 2:
        return PreconditionReport(True, (), "two particles: no proper subsystem with internal dynamics")
    couplings = system.pair_couplings(coupling)
    cache = {}
    checks = []
    for (i, j), lam in zip(system.pairs, couplings):
        v = system.pair_problem(i, j)
        key = (v, float(lam))
        if key not in cache:
            attractive = v.kind == "gaussian-sum" or v.depth < 0
            cache[key] = bs_max_eigenvalue(v, lam, 0.0, grid) if lam > 0 and attractive and not v.is_zero else 0.0
        mu = cache[key]
        if mu < 1.0 - tol:
            status = "subcritical"
        elif mu > 1.0 + tol:
            status = "supercritical"
        else:
            status = "resonant"
        checks.append(PairCheck((i, j), float(lam), float(mu), status))
    bad = [c for c in checks if c.status != "subcritical"]
    if bad:
        message = "; ".join(f"pair ({c.pair[0] + 1},{c.pair[1] + 1}) is {c.status} (mu = {c.bs_max:.6f})"
                            for c in bad)
    else:
        message = "all pairs subcritical"
    return PreconditionReport(not bad, tuple(checks), message, system.n_particles <= 3)


@dataclass(frozen=True)
class NBodyThresholdReport(ThresholdReport):
    lambda_first: float      # estimate before the stability growth
    relative_shift: float    # |lambda_cr - lambda_first| / lambda_cr
    stable: bool
    basis_size: int
    energy_at_cr: float


def bisect_threshold(solver: StochasticVariationalSolver, lo: float, hi: float,
                     tol: float = 1e-12) -> tuple[float, float, int]:
    """Bisection on the sign of the frozen-basis ground energy; returns ``(lo, hi, iterations)``."""
    if solver.energy_at(hi).energy >= 0.0:
        raise ValueError(f"no bound state at coupling {hi:g}; cannot bracket the threshold")
    it = 0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if solver.energy_at(mid).energy < 0.0:
            hi = mid
        else:
            lo = mid
        it += 1
    return lo, hi, it


def _binding_coupling(system: SystemSpec, grid: RadialGrid) -> float:
    """A global coupling at which some unpinned pair, hence the whole system, is bound."""
    from .twobody import critical_coupling_2b

    best = math.inf
    for (i, j) in system.pairs:
        if (i, j) in system.pinned:
            continue
        v = system.pair_problem(i, j)
        if v.is_zero or (v.kind != "gaussian-sum" and v.depth > 0):
            continue
        best = min(best, critical_coupling_2b(v, grid).lambda_cr)
    if not math.isfinite(best):
        raise ValueError("no attractive unpinned pair: cannot bracket the N-body threshold")
    return 1.2 * best


def critical_coupling_nb(system: SystemSpec, solver: StochasticVariationalSolver | None = None,
                         extra: int = 20, lambda_fit: float | None = None, stability: float = 1e-3,
                         grid: RadialGrid = DEFAULT_GRID) -> NBodyThresholdReport:
    """N-body critical coupling: where the variational ground energy crosses zero.

    Half of the ``solver.n_basis`` elements are grown at ``lambda_fit``
    (default: 1.2 times the smallest pair threshold), the rest just above
    the resulting crossing; the crossing of this frozen basis is the first
    estimate. Then ``extra`` elements are grown just above it and the
    crossing is bisected again. The relative shift between the two
    estimates is the stability measure.
    """
    solver = StochasticVariationalSolver(n_basis=60, seed=0) if solver is None else solver
    lam_fit = _binding_coupling(system, grid) if lambda_fit is None else lambda_fit
    n_basis = solver.n_basis
    solver.set_params(n_basis=max(1, n_basis // 2))
    try:
        solver.fit(system.with_coupling(lam_fit))
    finally:
        solver.set_params(n_basis=n_basis)
    _, rough, _ = bisect_threshold(solver, 0.0, lam_fit)
    solver.retarget(rough * 1.01).grow(n_basis - len(solver.basis_))
    _, first, _ = bisect_threshold(solver, 0.0, rough)
    solver.retarget(first * 1.01).grow(extra)
    lo, hi, it = bisect_threshold(solver, 0.0, first)
    shift = abs(hi - first) / hi
    if shift >= stability:
        warnings.warn(f"unstable N-body threshold: +{extra} elements moved it by {shift:.2e}",
                      RuntimeWarning, stacklevel=2)
    energy = solver.energy_at(hi).energy
    return NBodyThresholdReport(lo, hi, hi, hi - lo, it, first, shift, shift < stability,
                                len(solver.basis_), energy)


def approach_threshold(solver: StochasticVariationalSolver, lambda_cr: float, epsilons,
                       grow: int = 30, tol: float = 1e-13) -> float:
    """Refine a threshold estimate by growing the basis at ``lambda_cr (1 + eps)`` for each ``eps``.

    The estimate only decreases (it is a variational upper bound on the true
    threshold), so every coupling above it has a bound ground state.
    """
    for eps in epsilons:
        solver.retarget(lambda_cr * (1.0 + eps)).grow(grow)
        _, lambda_cr, _ = bisect_threshold(solver, 0.0, lambda_cr * (1.0 + eps), tol)
    return lambda_cr


def absorption_trace(system: SystemSpec, lambda_schedule, *,
                     solver: StochasticVariationalSolver | None = None, l_values=(5.0,),
                     pairs=None, grow_per_row: int = 0) -> SpreadingProfile:
    """Ground energy, ``<rho^2>`` and pair probabilities along a decreasing coupling schedule.

    With ``grow_per_row`` the basis is extended at every row, optimised at
    that row's coupling, before the row is measured; growth that raises the
    energy at that coupling is recorded in ``monotonicity_violations``. A
    row with ``E >= 0`` ends the trace with a warning.
    """
    schedule = [float(x) for x in lambda_schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("lambda schedule must be strictly decreasing")
    pairs = tuple(tuple(p) for p in (system.pairs if pairs is None else pairs))
    l_values = tuple(float(x) for x in l_values)
    if solver is None:
        solver = StochasticVariationalSolver(n_basis=60, seed=0).fit(system.with_coupling(schedule[0]))
    profile = SpreadingProfile(l_values, pairs)
    for lam in schedule:
        state = solver.state_at(lam)
        if grow_per_row:
            before = state.energy
            solver.retarget(lam).grow(grow_per_row)
            state = solver.state_at(lam)
            if state.energy > before + MONOTONE_RTOL * abs(before):
                profile.monotonicity_violations.append((lam, float(before), float(state.energy)))
        if state.energy >= 0.0:
            warnings.warn(f"no bound state at lambda = {lam:g}; trace truncated", RuntimeWarning,
                          stacklevel=2)
            break
        probs = {}
        for p in pairs:
            for length, val in zip(l_values, expectation_pair_cdf(state, p, l_values)):
                probs[(p, length)] = float(val)
        profile.rows.append({"lambda": lam, "energy": float(state.energy),
                             "rho_sq": expectation_rho_sq(state), "pair_probs": probs})
    return profile
