"""s-wave two-body problem ``-Laplacian + lambda v`` (hbar = 1, 2 mu = 1).

Two independent discretisations are used: a finite-difference Laplacian on
a uniform grid for spectra, and a Nystrom discretisation of the s-wave Green
kernel ``G_k(r, r') = sinh(k r_<) exp(-k r_>) / k`` on composite
Gauss-Legendre nodes over the support of the potential for the
Birman-Schwinger operator. Both act on ``u(r) = r psi(r)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal, eigvalsh, solve

from .model import PairPotential, regularizer_vr, split_potential
from .quadrature import panel_rule

GL_ORDER = 16


class GridWarning(UserWarning):
    """The radial box is too small for the computed state."""


class ThresholdError(ValueError):
    """No coupling threshold could be bracketed."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform grid ``r_i = i h`` (``i = 1..n``) with Dirichlet walls at 0 and ``r_max``."""

    r_max: float = 20.0
    n: int = 2000

    def __post_init__(self):
        if not self.r_max > 0:
            raise ValueError("r_max must be > 0")
        if int(self.n) < 2:
            raise ValueError("grid needs at least 2 points")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return self.r_max / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, self.h)

    def laplacian(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of the three-point ``-d^2/dr^2``."""
        h2 = self.h ** 2
        return np.full(self.n, 2.0 / h2), np.full(self.n - 1, -1.0 / h2)

    def dense_laplacian(self) -> np.ndarray:
        d, e = self.laplacian()
        return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)


DEFAULT_GRID = RadialGrid(20.0, 2000)


@dataclass(frozen=True)
class ThresholdReport:
    lambda_lo: float
    lambda_hi: float
    lambda_cr: float
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return asdict(self)


# -- spectra on the finite-difference grid ------------------------------------

def _lowest_fd(grid: RadialGrid, potential, count=1, vectors=False):
    d, e = grid.laplacian()
    d = d + potential(grid.nodes)
    return eigh_tridiagonal(d, e, eigvals_only=not vectors, select="i",
                            select_range=(0, count - 1), lapack_driver="stebz" if not vectors else "auto")


def lowest_eigenvalue(grid: RadialGrid, potential) -> float:
    """Lowest eigenvalue of ``-d^2/dr^2 + potential(r)`` on ``grid``."""
    return float(_lowest_fd(grid, potential)[0])


def bound_states(v, lam: float, grid: RadialGrid = DEFAULT_GRID) -> list[float]:
    """Negative s-wave eigenvalues of ``-Laplacian + lam v``, ascending.

    Warns with :class:`GridWarning` when the ground state has not decayed
    to ``1e-8`` of its maximum at the wall.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    d, e = grid.laplacian()
    d = d + lam * v(grid.nodes)
    if d.min() - 2.0 * abs(e[0]) >= 0.0:  # Gershgorin: nothing below zero
        return []
    energies = eigh_tridiagonal(d, e, eigvals_only=True, select="v",
                                select_range=(-np.inf, 0.0), lapack_driver="stebz")
    energies = np.sort(energies[energies < 0.0])
    if len(energies):
        _, vec = eigh_tridiagonal(d, e, select="i", select_range=(0, 0), lapack_driver="stemr")
        u = np.abs(vec[:, 0])
        if u[-1] > 1e-8 * u.max():
            warnings.warn(f"ground state reaches the wall at r_max = {grid.r_max:g}; "
                          "grid too coarse or box too small", GridWarning, stacklevel=2)
    return [float(x) for x in energies]


# -- zero-energy scattering -----------------------------------------------------

def scattering_length(v: PairPotential, lam: float, r_out: float | None = None) -> float:
    """s-wave scattering length from ``u(r) ~ (r - a)`` of the zero-energy solution.

    Returns ``inf`` when ``u'`` vanishes at the matching radius (resonance).
    Warns with :class:`GridWarning` if ``a`` has not settled between
    ``r_out`` and ``1.5 r_out``.
    """
    if lam == 0 or v.is_zero:
        return 0.0
    r_out = v.support_radius() if r_out is None else r_out
    stops = sorted({*v.breakpoints(), r_out, 1.5 * r_out})
    stops = [s for s in stops if s <= 1.5 * r_out]

    def rhs(r, y):
        return [y[1], lam * float(v(r)) * y[0]]

    y = np.array([0.0, 1.0])
    r0, estimates = 0.0, {}
    for stop in stops:
        sol = solve_ivp(rhs, (r0, stop), y, method="DOP853", rtol=1e-12, atol=1e-14)
        y, r0 = sol.y[:, -1], stop
        if stop in (r_out, 1.5 * r_out):
            u, du = y
            estimates[stop] = math.inf if abs(du) * stop <= 1e-12 * abs(u) else stop - u / du
    a1, a2 = estimates[r_out], estimates[1.5 * r_out]
    if math.isfinite(a1) and math.isfinite(a2) and abs(a1 - a2) > 1e-6 * max(1.0, abs(a1)):
        warnings.warn("scattering length not converged; increase r_out", GridWarning, stacklevel=2)
    return a2


# -- Birman-Schwinger operator --------------------------------------------------

def green_s_wave(r, rp, k: float):
    """``sinh(k r_<) exp(-k r_>) / k`` (``r_<`` at ``k = 0``), overflow-free."""
    lo, hi = np.minimum(r, rp), np.maximum(r, rp)
    if k == 0.0:
        return lo
    return -np.exp(-k * (hi - lo)) * np.expm1(-2.0 * k * lo) / (2.0 * k)


def bs_nodes(v, grid: RadialGrid = DEFAULT_GRID, order: int = GL_ORDER):
    """Composite Gauss-Legendre nodes on ``[0, min(support, r_max)]`` (about ``grid.n`` of them)."""
    r_end = min(v.support_radius(), grid.r_max) if isinstance(v, PairPotential) else grid.r_max
    breaks = [b for b in (v.breakpoints() if isinstance(v, PairPotential) else ()) if b < r_end]
    panels = max(1, grid.n // order)
    cuts = [0.0, *breaks, r_end]
    lengths = np.diff(cuts)
    # panels per segment proportional to its length, at least one each
    counts = np.maximum(1, np.round(panels * lengths / lengths.sum()).astype(int))
    edges = np.unique(np.concatenate([np.linspace(a, b, c + 1) for a, b, c in zip(cuts[:-1], cuts[1:], counts)]))
    return panel_rule(edges, order)


@dataclass(frozen=True, eq=False)
class BSMatrix:
    """Symmetric Nystrom matrix of ``lam sqrt(v_-) (H_0 + lam v_+ + k^2)^{-1} sqrt(v_-)``."""

    lam: float
    k: float
    entries: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return eigvalsh(self.entries)

    def max_eigenvalue(self) -> float:
        n = len(self.entries)
        return float(eigvalsh(self.entries, subset_by_index=[n - 1, n - 1])[0])


def resolvent_nystrom(v, lam: float, k: float, nodes, weights) -> np.ndarray:
    """``sqrt(w) (H_0 + lam v_+ + k^2)^{-1} sqrt(w)`` on quadrature nodes."""
    sw = np.sqrt(weights)
    g = sw[:, None] * green_s_wave(nodes[:, None], nodes[None, :], k) * sw[None, :]
    vp = np.maximum(0.0, v(nodes))
    if lam == 0 or not np.any(vp > 0):
        return g
    root = np.sqrt(lam * vp)
    inner = np.eye(len(nodes)) + root[:, None] * g * root[None, :]
    gr = g * root[None, :]
    return g - gr @ solve(inner, gr.T, assume_a="pos")


def bs_matrix(v, lam: float, k: float, grid: RadialGrid = DEFAULT_GRID, nodes=None) -> BSMatrix:
    """Assemble the Birman-Schwinger matrix at coupling ``lam`` and ``E = -k^2``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    x, w = bs_nodes(v, grid) if nodes is None else nodes
    r = resolvent_nystrom(v, lam, k, x, w)
    vm = np.sqrt(np.maximum(0.0, -np.asarray(v(x))))
    m = lam * vm[:, None] * r * vm[None, :]
    return BSMatrix(lam, k, 0.5 * (m + m.T), x, w)


def bs_max_eigenvalue(v, lam: float, k: float, grid: RadialGrid = DEFAULT_GRID) -> float:
    """Largest eigenvalue (= norm, the kernel is positive) of the BS matrix."""
    return bs_matrix(v, lam, k, grid).max_eigenvalue()


def bs_count(v, lam: float, k: float, grid: RadialGrid = DEFAULT_GRID) -> int:
    """Number of BS eigenvalues above one (bound states below ``-k^2``)."""
    return int(np.sum(bs_matrix(v, lam, k, grid).eigenvalues() > 1.0))


def _has_attraction(v, nodes) -> bool:
    return bool(np.any(np.asarray(v(nodes)) < 0))


def critical_coupling_2b(v, grid: RadialGrid = DEFAULT_GRID, lambda_max: float = 1e4,
                         tol: float = 1e-9) -> ThresholdReport:
    """Bisection on ``max BS eigenvalue(lam, k=0) - 1``.

    When ``v`` has no repulsive part the kernel is linear in ``lam`` and is
    diagonalised once; otherwise every step re-assembles it.
    """
    nodes = bs_nodes(v, grid)
    if not _has_attraction(v, nodes[0]):
        raise ThresholdError("no attractive threshold: v has no negative part")
    repulsive = bool(np.any(np.asarray(v(nodes[0])) > 0))
    if repulsive:
        def indicator(lam):
            return bs_matrix(v, lam, 0.0, grid, nodes).max_eigenvalue() - 1.0
    else:
        mu1 = bs_matrix(v, 1.0, 0.0, grid, nodes).max_eigenvalue()

        def indicator(lam):
            return lam * mu1 - 1.0

    lo, hi, iterations = 0.0, 1.0, 0
    while indicator(hi) <= 0.0:
        lo, hi = hi, 2.0 * hi
        iterations += 1
        if hi > lambda_max:
            raise ThresholdError(f"no attractive threshold for lambda in (0, {lambda_max:g}]")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if indicator(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        iterations += 1
    return ThresholdReport(lo, hi, 0.5 * (lo + hi), hi - lo, iterations)


def resonance_check(v, lam: float, tol: float = 1e-3, grid: RadialGrid = DEFAULT_GRID) -> str:
    """Classify ``lam`` against the threshold; ``|mu - 1| = tol`` counts as resonant."""
    if not tol > 0:
        raise ValueError("tol must be > 0")
    mu = bs_max_eigenvalue(v, lam, 0.0, grid) if lam > 0 else 0.0
    if mu < 1.0 - tol:
        return "subcritical"
    if mu > 1.0 + tol:
        return "supercritical"
    return "resonant"


# -- resolvent structure on the finite-difference grid ----------------------------

def resolvent_pair(v, lam: float, k: float, grid: RadialGrid):
    """Dense ``A^-1 = (H_0 + k^2)^-1`` and ``B^-1 = (H_0 + lam v_+ + k^2)^-1`` plus ``U = v_+``."""
    t = grid.dense_laplacian() + k * k * np.eye(grid.n)
    u = np.diag(np.maximum(0.0, v(grid.nodes)))
    a_inv = np.linalg.inv(t)
    b_inv = np.linalg.inv(t + lam * u)
    return a_inv, b_inv, u


def resolvent_identity_residuals(v, lam: float, k: float, grid: RadialGrid) -> tuple[float, float]:
    """Max-entry residuals of ``A^-1 - B^-1 = lam A^-1 U B^-1 = lam B^-1 U A^-1``."""
    a_inv, b_inv, u = resolvent_pair(v, lam, k, grid)
    diff = a_inv - b_inv
    r1 = np.abs(diff - lam * a_inv @ u @ b_inv).max()
    r2 = np.abs(diff - lam * b_inv @ u @ a_inv).max()
    scale = np.abs(a_inv).max()
    return float(r1 / scale), float(r2 / scale)


def resolvent_min_entry(v, lam: float, k: float, grid: RadialGrid) -> float:
    """Smallest entry of the position-space kernel of ``(H_0 + lam v_+ + k^2)^-1``."""
    _, b_inv, _ = resolvent_pair(v, lam, k, grid)
    return float(b_inv.min() / grid.h)


# -- Definitions probe ------------------------------------------------------------

HARDY_KAPPA = 0.25
PROBE_GRID = RadialGrid(2000.0, 200_000)


@dataclass(frozen=True)
class DefsRow:
    epsilon: float
    def1: float     # lowest eigenvalue of H + eps v
    def2: float     # of eps H_0 + lam v
    def3: float     # of H - eps V_R
    verdicts: tuple[str, str, str]


@dataclass(frozen=True)
class DefsProbeReport:
    lam: float
    rows: tuple[DefsRow, ...]
    classification: str              # as resonance_check, or "inconclusive"
    h_min: float                     # lowest eigenvalue of H itself
    epsilon0: float | None = None    # H - eps0 H_0 >= 0 witness (subcritical case)
    hardy_min: float | None = None   # lowest eigenvalue of H_0 - kappa V_R
    witness_min: float | None = None  # lowest eigenvalue of H - eps0 kappa V_R
    kappa: float = HARDY_KAPPA

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(e: float, tol: float) -> str:
    if abs(e) <= tol:
        return "inconclusive"
    return "negative" if e < 0 else "nonnegative"


def defs_probe(v, lam: float, epsilons, grid: RadialGrid = PROBE_GRID, tol: float = 1e-10,
               eps0_scan=(0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)) -> DefsProbeReport:
    """Lowest grid eigenvalues of the three perturbed operators and the subcritical witness.

    The coupling is classified ``resonant`` (critical) when ``H >= 0`` and
    every perturbation has negative spectrum for all ``epsilons``,
    ``supercritical`` when ``H`` itself has negative spectrum and
    ``subcritical`` otherwise; any eigenvalue within ``tol`` of zero makes
    the verdict ``inconclusive``. In the subcritical case the largest
    ``eps0`` from ``eps0_scan`` with ``H - eps0 H_0 >= -tol`` is reported
    together with the Hardy bound ``H_0 - V_R / 4 >= 0`` and the combined
    witness ``H - eps0 V_R / 4``.
    """
    r = grid.nodes
    vr = regularizer_vr(r * r)
    vals = lam * np.asarray(v(r))
    h_min = lowest_eigenvalue(grid, lambda x: vals)
    if _verdict(h_min, tol) == "negative":
        return DefsProbeReport(lam, (), "supercritical", h_min)
    rows = []
    for eps in epsilons:
        e1 = lowest_eigenvalue(grid, lambda x: (lam + eps) * np.asarray(v(x)))
        e2 = eps * lowest_eigenvalue(grid, lambda x: vals / eps)
        e3 = lowest_eigenvalue(grid, lambda x: vals - eps * vr)
        rows.append(DefsRow(float(eps), e1, e2, e3, tuple(_verdict(e, tol) for e in (e1, e2, e3))))
    verdicts = [x for row in rows for x in row.verdicts] + [_verdict(h_min, tol)]
    if all(x == "negative" for x in verdicts[:-1]) and verdicts[-1] == "nonnegative":
        return DefsProbeReport(lam, tuple(rows), "resonant", h_min)
    classification = "inconclusive" if "inconclusive" in verdicts else "subcritical"

    eps0 = None
    for e in eps0_scan:
        # H - e H_0 = (1 - e) (H_0 + lam v / (1 - e))
        if (1.0 - e) * lowest_eigenvalue(grid, lambda x: vals / (1.0 - e)) >= -tol:
            eps0 = e
            break
    hardy = lowest_eigenvalue(grid, lambda x: -HARDY_KAPPA * vr)
    witness = None
    if eps0 is not None:
        witness = lowest_eigenvalue(grid, lambda x: vals - eps0 * HARDY_KAPPA * vr)
    return DefsProbeReport(lam, tuple(rows), classification, h_min, eps0, hardy, witness)


def split_check(v, r) -> tuple[float, float]:
    """Max of ``|v_+ v_-|`` and ``|v_+ - v_- - v|`` on the points ``r``."""
    vp, vm = split_potential(v)
    return float(np.abs(vp(r) * vm(r)).max()), float(np.abs(vp(r) - vm(r) - v(r)).max())
