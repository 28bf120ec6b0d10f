"""The regularising multiplier ``B(z)``, the uniform Birman-Schwinger bound and the kernel constants.

``B(z)`` acts in momentum space as multiplication by ``1 + z + t(|p_y|)``
with ``t(p) = (sqrt(p) - 1)`` on the unit ball and zero outside. The
kernel constant ``C0`` and the ``wegot`` integral are the low-dimensional
majorants that bound the three-body kernel norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .jacobi import JacobiFrame
from .model import NotIntegrableError, PairPotential, fourier_sqrt_abs, potential_norms
from .quadrature import QuadratureError, adaptive_gauss, tail_radius
from .twobody import DEFAULT_GRID, RadialGrid, bs_matrix, bs_nodes, resolvent_nystrom

WEGOT_BOUND = 4.0 * math.pi


class BoundViolation(AssertionError):
    """A norm bound that must hold analytically failed numerically."""


def t_multiplier(p_norm):
    """``sqrt(p) - 1`` for ``p <= 1``, else 0."""
    p = np.asarray(p_norm, dtype=float)
    if np.any(p < 0):
        raise ValueError("|p| must be non-negative")
    out = np.where(p <= 1.0, np.sqrt(np.minimum(p, 1.0)) - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RegularizerMultiplier:
    """``m(p) = 1 + z + t(|p|)``, invertible for ``Re z > 0`` with ``|m| >= Re z``."""

    z: complex

    def __post_init__(self):
        if not complex(self.z).real > 0:
            raise ValueError("Re z must be > 0")

    def __call__(self, p_norm):
        return 1.0 + self.z + t_multiplier(p_norm)


def y_momentum_norm(momenta) -> np.ndarray:
    """``|p_y|`` for momenta of shape ``(..., N-1, 3)`` in a frame whose first coordinate is ``x``."""
    p = np.asarray(momenta, dtype=float)
    return np.sqrt((p[..., 1:, :] ** 2).sum(axis=(-2, -1)))


def apply_b(z, field, p_norm):
    """``B(z) f``: multiply samples of ``f`` by ``1 + z + t(|p_y|)``."""
    return RegularizerMultiplier(z)(p_norm) * np.asarray(field)


def apply_b_inverse(z, field, p_norm):
    """``B(z)^-1 f``: divide samples of ``f`` by ``1 + z + t(|p_y|)``."""
    return np.asarray(field) / RegularizerMultiplier(z)(p_norm)


# -- uniform Birman-Schwinger bound ---------------------------------------------

def _bs_norm_and_matrix(v, lam, k, grid, nodes):
    m = bs_matrix(v, lam, k, grid, nodes)
    return m.max_eigenvalue(), m


def find_omega(v, lam: float, grid: RadialGrid = DEFAULT_GRID, tol: float = 1e-12) -> float:
    """Largest ``omega`` in ``(0, 1]`` with ``H_0 + lam v_+ - lam (1 + omega) v_- >= 0``.

    The attractive part enters the Birman-Schwinger kernel linearly, so the
    kernel at ``lam`` is assembled once and ``omega`` is bisected on
    ``(1 + omega) mu - 1``.

    Raises
    ------
    ValueError
        If the pair is at or beyond its critical coupling.
    """
    nodes = bs_nodes(v, grid)
    mu, _ = _bs_norm_and_matrix(v, lam, 0.0, grid, nodes)
    if mu >= 1.0:
        raise ValueError("pair at or beyond critical coupling")
    if 2.0 * mu <= 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (1.0 + mid) * mu <= 1.0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class NormBoundRow:
    k: float
    norm: float
    bound: float
    stead_residual: float
    holds: bool


@dataclass(frozen=True)
class NormBoundReport:
    lam: float
    omega: float
    rows: tuple[NormBoundRow, ...]

    def to_dict(self) -> dict:
        return asdict(self)


def _psd_sqrt(m):
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    return (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T


def stead_residual(v, lam: float, k: float, grid: RadialGrid = DEFAULT_GRID, nodes=None) -> float:
    """``| ||A^-1/2 B A^-1/2|| - ||B^1/2 A^-1 B^1/2|| |`` with ``A = H_0 + lam v_+ + k^2``, ``B = lam v_-``."""
    x, w = bs_nodes(v, grid) if nodes is None else nodes
    r = resolvent_nystrom(v, lam, k, x, w)
    b = lam * np.maximum(0.0, -np.asarray(v(x)))
    r_half = _psd_sqrt(r)
    left = r_half @ (b[:, None] * r_half)
    right = np.sqrt(b)[:, None] * r * np.sqrt(b)[None, :]
    n1 = np.linalg.eigvalsh(0.5 * (left + left.T))[-1]
    n2 = np.linalg.eigvalsh(0.5 * (right + right.T))[-1]
    return float(abs(n1 - n2))


def rtau_norm_bound(v, lam: float, k_values, grid: RadialGrid = DEFAULT_GRID,
                    slack: float = 1e-4, strict: bool = True) -> NormBoundReport:
    """Check ``||lam sqrt(v_-) (H_0 + lam v_+ + k^2)^-1 sqrt(v_-)|| <= 1 / (1 + omega)`` for each ``k``.

    Raises :class:`BoundViolation` when ``strict`` and any row fails.
    """
    omega = find_omega(v, lam, grid)
    bound = 1.0 / (1.0 + omega)
    nodes = bs_nodes(v, grid)
    rows = []
    for k in k_values:
        norm, _ = _bs_norm_and_matrix(v, lam, float(k), grid, nodes)
        res = stead_residual(v, lam, float(k), grid, nodes)
        rows.append(NormBoundRow(float(k), norm, bound, res, norm <= bound + slack))
    report = NormBoundReport(lam, omega, tuple(rows))
    if strict and not all(r.holds for r in rows):
        bad = [r.k for r in rows if not r.holds]
        raise BoundViolation(f"Birman-Schwinger norm exceeds 1/(1+omega) at k = {bad}")
    return report


# -- kernel constants -------------------------------------------------------------

@dataclass(frozen=True)
class KernelBoundReport:
    c0: float
    factors: tuple[float, float, float]
    wegot_value: float
    wegot_bound: float
    k_n: float
    f2_direct: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _radial(g, start, breakpoints=(), rtol=1e-13):
    def integrand(r):
        return 4.0 * math.pi * r * r * g(r)

    r_max = tail_radius(integrand, start=start, rel=1e-16)
    return float(adaptive_gauss(integrand, 0.0, r_max, breakpoints=breakpoints, rtol=rtol))


def _radial_doubling(g, start=1.0, rtol=1e-13, q_limit=1e3):
    """``4 pi int_0^inf q^2 g(q) dq`` over doubling shells until a shell is negligible."""
    def integrand(q):
        return 4.0 * math.pi * q * q * g(q)

    total = float(adaptive_gauss(integrand, 0.0, start, rtol=rtol))
    lo = start
    while lo < q_limit:
        # absolute floor: far shells hold only the round-off of the inner transform
        shell = float(adaptive_gauss(integrand, lo, 2.0 * lo, rtol=rtol, atol=1e-15 * abs(total)))
        total += shell
        lo *= 2.0
        if abs(shell) <= 1e-15 * abs(total):
            return total
    raise QuadratureError("transform tail does not decay")


def attractive_volume(v: PairPotential, alpha: float) -> float:
    """``int (V)_-(alpha x) d^3x``."""
    bps = tuple(b / alpha for b in v.breakpoints())
    try:
        return _radial(lambda x: np.maximum(0.0, -np.asarray(v(alpha * x))), max(bps, default=1.0), bps)
    except QuadratureError as exc:
        raise NotIntegrableError(f"first factor (attractive volume) diverges: {exc}") from None


def transform_factor(v: PairPotential, gamma: float, direct: bool = False) -> float:
    """``int |FT(|V|^1/2)(s / gamma)|^2 d^3s``.

    By Plancherel this is ``gamma^3 int |V| d^3r``; ``direct=True``
    integrates the squared transform instead (smooth kinds only).
    """
    try:
        if not direct:
            return gamma ** 3 * potential_norms(v)[0]
        return gamma ** 3 * _radial_doubling(lambda q: fourier_sqrt_abs(v, q) ** 2)
    except QuadratureError as exc:
        raise NotIntegrableError(f"second factor (transform of |V|^1/2) diverges: {exc}") from None


def exponential_factor() -> float:
    """``int |t|^-2 exp(-2|t|) d^3t`` (= 2 pi)."""
    return _radial(lambda t: np.exp(-2.0 * t) / (t * t), 1.0)


def c0_constant(v12: PairPotential, v23: PairPotential, frame: JacobiFrame,
                k_n: float = 0.0) -> KernelBoundReport:
    """``C0 = f1 f2 f3 / (2^7 pi^5 gamma^6)`` with the frame's ``alpha`` and ``gamma``."""
    if frame.gamma is None:
        raise ValueError("the kernel constant needs a frame with at least three particles")
    f1 = attractive_volume(v12, frame.alpha)
    f2 = transform_factor(v23, frame.gamma)
    f3 = exponential_factor()
    direct = None
    if v23.kind in ("gaussian", "gaussian-sum"):
        direct = transform_factor(v23, frame.gamma, direct=True)
    c0 = f1 * f2 * f3 / (2 ** 7 * math.pi ** 5 * frame.gamma ** 6)
    value, bound = wegot_bound_check(k_n)
    return KernelBoundReport(c0, (f1, f2, f3), value, bound, float(k_n), direct)


def wegot_value(k_n: float) -> float:
    """``int_{|p|<=1} [1/(k + sqrt|p|) - 1/(k + 1)]^2 / sqrt(p^2 + k^2) d^3p``."""
    if k_n < 0:
        raise ValueError("k_n must be >= 0")
    k = float(k_n)

    def integrand(s):
        # p = s^2 removes the square-root behaviour at the origin
        p = s * s
        core = (1.0 / (k + s) - 1.0 / (k + 1.0)) ** 2
        return 4.0 * math.pi * p * p * core / np.sqrt(p * p + k * k) * 2.0 * s

    return float(adaptive_gauss(integrand, 0.0, 1.0, rtol=1e-14))


def wegot_bound_check(k_n: float) -> tuple[float, float]:
    """``(value, 4 pi)``; raises :class:`BoundViolation` if the value exceeds the bound."""
    value = wegot_value(k_n)
    if value > WEGOT_BOUND:
        raise BoundViolation(f"wegot integral {value} exceeds 4 pi at k_n = {k_n}")
    return value, WEGOT_BOUND
