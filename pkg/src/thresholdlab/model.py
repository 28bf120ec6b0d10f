"""Pair potentials, N-body system descriptions and their integrability data.

Units: hbar = 1 and every pair potential is a function of the physical
separation ``|r_i - r_j|``. A two-body problem with ``2 mu = 1`` (unit
masses) then reads ``-Laplacian + lambda * v(r)``; other reduced masses are
folded in by :meth:`PairPotential.dilated`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable, Mapping

import numpy as np
from scipy.special import erfcx, gammainc

from .quadrature import QuadratureError, adaptive_gauss, tail_radius

KINDS = ("gaussian", "square-well", "screened-coulomb", "gaussian-sum")

# |v| below this fraction of its scale counts as zero when locating supports.
_TAIL = 1e-16


class NotIntegrableError(QuadratureError):
    """A radial integral of a potential failed to converge."""


@dataclass(frozen=True)
class PairPotential:
    """Radial pair potential ``v(r)``.

    ``gaussian``          depth * exp(-(r/range)^2)
    ``square-well``       depth for r < range, 0 beyond
    ``screened-coulomb``  depth * exp(-r/range) / (r/range)
    ``gaussian-sum``      depth * sum_k w_k exp(-(r/b_k)^2), components = ((w_k, b_k), ...)

    Negative ``depth`` is attractive.
    """

    kind: str
    depth: float = -1.0
    range: float = 1.0
    components: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if not self.range > 0:
            raise ValueError("range must be > 0")
        comps = tuple((float(w), float(b)) for w, b in self.components)
        if self.kind == "gaussian-sum":
            if not comps:
                raise ValueError("gaussian-sum needs at least one (weight, range) component")
            if any(b <= 0 for _, b in comps):
                raise ValueError("component range must be > 0")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "depth", float(self.depth))
        object.__setattr__(self, "range", float(self.range))

    @classmethod
    def from_dict(cls, data: Mapping) -> "PairPotential":
        return cls(kind=data["kind"], depth=data.get("depth", -1.0),
                   range=data.get("range", 1.0),
                   components=tuple(tuple(c) for c in data.get("components", ())))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "depth": self.depth, "range": self.range}
        if self.kind == "gaussian-sum":
            out["components"] = [list(c) for c in self.components]
        return out

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        d, b = self.depth, self.range
        if self.kind == "gaussian":
            return d * np.exp(-(r / b) ** 2)
        if self.kind == "square-well":
            return np.where(r < b, d, 0.0)
        if self.kind == "screened-coulomb":
            with np.errstate(divide="ignore"):
                return d * np.exp(-r / b) * b / r
        out = np.zeros_like(r)
        for wk, bk in self.components:
            out = out + wk * np.exp(-(r / bk) ** 2)
        return d * out

    @property
    def is_zero(self) -> bool:
        if self.depth == 0.0:
            return True
        return self.kind == "gaussian-sum" and all(w == 0.0 for w, _ in self.components)

    def scaled(self, factor: float) -> "PairPotential":
        """The potential ``factor * v``."""
        return replace(self, depth=self.depth * factor)

    def dilated(self, s: float) -> "PairPotential":
        """The potential ``v(r / s)``; ranges are multiplied by ``s``."""
        return replace(self, range=self.range * s,
                       components=tuple((w, b * s) for w, b in self.components))

    def breakpoints(self) -> tuple[float, ...]:
        """Radii where ``v`` is discontinuous."""
        return (self.range,) if self.kind == "square-well" else ()

    def support_radius(self, rel: float = _TAIL) -> float:
        """Radius beyond which ``|v|`` is below ``rel`` of its scale (exact for the square well)."""
        if self.kind == "square-well":
            return self.range
        if self.kind == "gaussian":
            return self.range * math.sqrt(-math.log(rel))
        if self.kind == "gaussian-sum":
            return max(b for _, b in self.components) * math.sqrt(
                -math.log(rel / sum(abs(w) for w, _ in self.components)))
        # exp(-x)/x < rel, solved by fixed point from x = -log(rel)
        x = -math.log(rel)
        for _ in range(50):
            x = -math.log(rel * x)
        return self.range * x

    def gaussian_average(self, sigma_sq):
        """``E[v(|r|)]`` for ``r ~ N(0, sigma_sq * I_3)``, in closed form.

        This is the pair matrix element between correlated Gaussians, per unit
        overlap, when ``sigma_sq`` is the variance of one Cartesian component
        of the pair separation.
        """
        s2 = np.asarray(sigma_sq, dtype=float)
        d, b = self.depth, self.range
        if self.kind == "gaussian":
            return d * (1.0 + 2.0 * s2 / b**2) ** -1.5
        if self.kind == "gaussian-sum":
            out = np.zeros_like(s2)
            for wk, bk in self.components:
                out = out + wk * (1.0 + 2.0 * s2 / bk**2) ** -1.5
            return d * out
        s = np.sqrt(s2)
        if self.kind == "square-well":
            return d * maxwell_cdf(b, s2)
        return d * b * math.sqrt(2.0 / math.pi) / s * (
            1.0 - math.sqrt(math.pi / 2.0) * (s / b) * erfcx(s / (math.sqrt(2.0) * b)))


def maxwell_cdf(radius, sigma_sq):
    """``P(|r| <= radius)`` for ``r ~ N(0, sigma_sq * I_3)``."""
    # regularised incomplete gamma: no cancellation at small radius
    return gammainc(1.5, 0.5 * np.asarray(radius, dtype=float) ** 2 / np.asarray(sigma_sq, dtype=float))


def zero_potential() -> PairPotential:
    return PairPotential("gaussian", depth=0.0, range=1.0)


def split_potential(v) -> tuple[Callable, Callable]:
    """Positive and negative parts ``v = v_plus - v_minus``.

    ``v`` may be a :class:`PairPotential` or any vectorised radial callable.
    """
    def v_plus(r):
        return np.maximum(0.0, v(r))

    def v_minus(r):
        return np.maximum(0.0, -np.asarray(v(r)))

    return v_plus, v_minus


def _radial_integral(g, v: PairPotential, rtol: float = 1e-12) -> float:
    """``4 pi int_0^R g(r) r^2 dr`` with R from the integrand tail."""
    def integrand(r):
        return 4.0 * math.pi * r * r * g(r)

    try:
        r_max = tail_radius(integrand, start=max(v.breakpoints(), default=1.0))
        return float(adaptive_gauss(integrand, 0.0, r_max, breakpoints=v.breakpoints(), rtol=rtol))
    except QuadratureError as exc:
        raise NotIntegrableError(f"{v.kind} potential: {exc}") from None


def potential_norms(v: PairPotential) -> tuple[float, float]:
    """``L^1`` and ``L^2`` norms of ``v`` on R^3 by adaptive radial quadrature.

    Raises
    ------
    NotIntegrableError
        If either radial integral fails to converge.
    """
    l1 = _radial_integral(lambda r: np.abs(v(r)), v)
    l2sq = _radial_integral(lambda r: v(r) ** 2, v)
    return l1, math.sqrt(l2sq)


def fourier_sqrt_abs(v: PairPotential, s) -> np.ndarray | float:
    """3D Fourier transform of ``|v|^{1/2}`` at momentum ``s``.

    Uses the symmetric convention ``(2 pi)^{-3/2} int f(r) exp(-i s.r) d^3r``.
    ``s`` is a 3-vector, an array of 3-vectors (last axis of length 3), or
    an array of momentum magnitudes; only ``|s|`` matters for radial ``v``.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim >= 1 and s.shape[-1] == 3:
        q = np.linalg.norm(s, axis=-1)
    else:
        q = np.abs(s)
    scalar = q.ndim == 0
    q = np.atleast_1d(q)
    flat = q.ravel()

    def integrand(r):
        root = np.sqrt(np.abs(v(r)))
        # r^2 sin(qr)/(qr) written with np.sinc to stay finite at q = 0
        return 4.0 * math.pi * root * r * r * np.sinc(np.outer(flat, r) / math.pi)

    r_max = v.support_radius(1e-28)  # sqrt|v| must fall to 1e-14
    try:
        vals = adaptive_gauss(integrand, 0.0, r_max, breakpoints=v.breakpoints(), rtol=1e-13)
    except QuadratureError as exc:
        raise NotIntegrableError(f"|v|^1/2 transform: {exc}") from None
    out = np.asarray(vals).reshape(q.shape) * (2.0 * math.pi) ** -1.5
    return float(out[0]) if scalar else out


def regularizer_vr(xi_norm_sq):
    """The weight ``1 / (1 + |xi|^2)``."""
    x = np.asarray(xi_norm_sq, dtype=float)
    if np.any(x < 0):
        raise ValueError("|xi|^2 must be non-negative")
    out = 1.0 / (1.0 + x)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SystemSpec:
    """N particles with masses, a full pair-potential table and a coupling.

    ``potentials`` maps each 0-based pair ``(i, j)`` with ``i < j`` to a
    :class:`PairPotential`; all ``N(N-1)/2`` entries must be present.
    ``pinned`` optionally fixes the coupling of some pairs, so that they do
    not follow ``coupling`` (e.g. a pair held at its own threshold).
    """

    masses: tuple[float, ...]
    potentials: Mapping[tuple[int, int], PairPotential] = field(default_factory=dict)
    coupling: float = 1.0
    pinned: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        masses = tuple(float(m) for m in self.masses)
        if len(masses) < 2:
            raise ValueError("need at least two particles")
        if any(not m > 0 for m in masses):
            raise ValueError("masses must be strictly positive")
        if not self.coupling > 0:
            raise ValueError("coupling must be > 0")
        table = {tuple(sorted(k)): p for k, p in self.potentials.items()}
        missing = [p for p in self.pairs if p not in table]
        if missing:
            raise ValueError(f"missing pair potentials for {missing}")
        extra = set(table) - set(self.pairs)
        if extra:
            raise ValueError(f"potentials given for unknown pairs {sorted(extra)}")
        pinned = {tuple(sorted(k)): float(c) for k, c in self.pinned.items()}
        if set(pinned) - set(self.pairs):
            raise ValueError(f"pinned couplings given for unknown pairs {sorted(set(pinned) - set(self.pairs))}")
        if any(not c >= 0 for c in pinned.values()):
            raise ValueError("pinned couplings must be >= 0")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "potentials", dict(sorted(table.items())))
        object.__setattr__(self, "pinned", dict(sorted(pinned.items())))

    @property
    def n_particles(self) -> int:
        return len(self.masses)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(len(self.masses)), 2))

    def with_coupling(self, coupling: float) -> "SystemSpec":
        return replace(self, coupling=coupling)

    def pair_couplings(self, coupling: float | None = None) -> np.ndarray:
        """Effective coupling of every pair (in ``pairs`` order) at global ``coupling``."""
        lam = self.coupling if coupling is None else coupling
        return np.array([self.pinned.get(p, lam) for p in self.pairs])

    def reduced_mass(self, i: int, j: int) -> float:
        mi, mj = self.masses[i], self.masses[j]
        return mi * mj / (mi + mj)

    def pair_problem(self, i: int, j: int) -> PairPotential:
        """Potential of pair ``(i, j)`` in the coordinate where its kinetic term is ``-Laplacian``.

        With ``x = sqrt(2 mu) (r_j - r_i)`` the pair Hamiltonian becomes
        ``-Laplacian_x + lambda V(x / sqrt(2 mu))``.
        """
        return self.potentials[(i, j)].dilated(math.sqrt(2.0 * self.reduced_mass(i, j)))
