"""Numerov shooting for ``u'' = (lam v(r) - E) u``, ``u(0) = 0``.

Kept deliberately separate from :mod:`thresholdlab.twobody` so that it can
serve as an independent check of the Birman-Schwinger and finite-difference
results.
"""

from __future__ import annotations

import math

import numpy as np


def shoot(v, lam: float, energy: float, r_max: float, h: float = 1e-3):
    """Numerov solution on ``[0, r_max]``; returns ``(r, u)`` normalised to ``u'(0) = 1``."""
    n = int(math.ceil(r_max / h))
    r = h * np.arange(n + 1)
    f = (lam * np.asarray(v(np.maximum(r, 1e-300)), dtype=float) - energy) * (h * h / 12.0)
    u = np.zeros(n + 1)
    u[1] = h
    # at r = 0 the potential term multiplies u(0) = 0, so only f[1] and f[2] matter for step 1
    for i in range(1, n):
        u[i + 1] = (2.0 * u[i] * (1.0 + 5.0 * f[i]) - u[i - 1] * (1.0 - f[i - 1])) / (1.0 - f[i + 1])
        if abs(u[i + 1]) > 1e250:
            u[: i + 2] *= 1e-250
    return r, u


def node_count(u) -> int:
    s = np.sign(u[1:])
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


def zero_energy_count(v, lam: float, r_match: float, h: float = 1e-3) -> int:
    """Bound states of ``-u'' + lam v u`` = zero-energy nodes, including the one the asymptote adds."""
    r, u = shoot(v, lam, 0.0, r_match, h)
    du = (u[-1] - u[-2]) / h
    extra = 1 if u[-1] * du < 0 else 0  # u ~ (r - a) crosses zero beyond r_match
    return node_count(u) + extra


def critical_coupling(v, r_match: float, lam_hi: float = 1e3, h: float = 1e-3,
                      tol: float = 1e-10) -> float:
    """Smallest ``lam`` with a zero-energy node, by bisection."""
    lo, hi = 0.0, 1.0
    while zero_energy_count(v, hi, r_match, h) == 0:
        lo, hi = hi, 2.0 * hi
        if hi > lam_hi:
            raise ValueError("no threshold below lam_hi")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if zero_energy_count(v, mid, r_match, h) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def ground_energy(v, lam: float, r_max: float, e_lo: float, h: float = 1e-3,
                  tol: float = 1e-13) -> float:
    """Lowest eigenvalue in ``(e_lo, 0)`` by bisection on the node count (Dirichlet at ``r_max``)."""
    lo, hi = e_lo, 0.0
    if node_count(shoot(v, lam, hi, r_max, h)[1]) == 0 and shoot(v, lam, hi, r_max, h)[1][-1] > 0:
        raise ValueError("no bound state below zero in this box")
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        u = shoot(v, lam, mid, r_max, h)[1]
        # below the ground state u has no node and stays positive at the wall
        if node_count(u) == 0 and u[-1] > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
