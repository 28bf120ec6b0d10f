"""Mass-scaled Jacobi frames and the orthogonal maps between them.

A frame is a binary cluster tree over the particles. Every internal node
joining clusters ``A`` and ``B`` contributes one coordinate
``sqrt(2 mu_AB) * (R_B - R_A)`` (``R`` = centre of mass, ``mu_AB`` the
cluster reduced mass); nodes are ordered by post-order traversal, so the
first coordinate is the pair relative coordinate ``x`` and the rest are the
``y_i``. With hbar = 1 the kinetic operator is ``-sum_k Laplacian_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


def _normalize_tree(ordering, n: int):
    if ordering is None:
        ordering = tuple(range(n))
    if isinstance(ordering, (int, np.integer)):
        return int(ordering)
    if isinstance(ordering, (str, bytes)):
        raise TypeError("clustering must be built from particle indices")
    items = [_normalize_tree(o, n) if not isinstance(o, (int, np.integer)) else int(o)
             for o in ordering]
    if len(items) < 2:
        raise ValueError("invalid clustering: every cluster needs at least two members")
    node = (items[0], items[1])
    for extra in items[2:]:
        node = (node, extra)  # flat sequences are left combs
    return node


def _leaves(tree):
    if isinstance(tree, int):
        return [tree]
    return _leaves(tree[0]) + _leaves(tree[1])


def _postorder(tree):
    if isinstance(tree, int):
        return []
    return _postorder(tree[0]) + _postorder(tree[1]) + [tree]


@dataclass(eq=False, frozen=True)
class JacobiFrame:
    """Mass-scaled Jacobi coordinates ``xi = matrix @ r`` (blockwise on 3-vectors).

    ``alpha``, ``beta`` and ``gamma`` refer to the first two coordinates: the
    pair ``(p1, p2)`` forming ``x`` and the cluster joined next. ``gamma`` and
    ``big_m`` are ``None`` for two particles.
    """

    masses: tuple[float, ...]
    tree: tuple
    matrix: np.ndarray
    alpha: float
    beta: float
    gamma: float | None
    big_m: float | None
    mu: dict = field(default_factory=dict)

    @property
    def n_particles(self) -> int:
        return len(self.masses)

    @property
    def dim(self) -> int:
        return len(self.masses) - 1

    @property
    def first_pair(self) -> tuple[int, int]:
        node = _postorder(self.tree)[0]
        return node[0], node[1]

    @property
    def inverse_weights(self) -> np.ndarray:
        """``diag(1 / (2 m_i))``: the lab kinetic metric."""
        return np.diag(1.0 / (2.0 * np.asarray(self.masses)))

    def to_internal(self, positions) -> np.ndarray:
        """Internal coordinates, shape ``(N-1, 3)``, from lab positions ``(N, 3)``."""
        return self.matrix @ np.asarray(positions, dtype=float)

    def to_lab(self, xi) -> np.ndarray:
        """Lab positions with the centre of mass at the origin."""
        return self.inverse_weights @ self.matrix.T @ np.asarray(xi, dtype=float)

    def permutation_map(self, perm) -> np.ndarray:
        """Matrix ``Q`` with ``xi(r_perm) = Q xi(r)`` where ``(r_perm)_i = r_{perm[i]}``."""
        n = self.n_particles
        p = np.zeros((n, n))
        p[np.arange(n), list(perm)] = 1.0
        return self.matrix @ p @ self.inverse_weights @ self.matrix.T


def build_frame(masses, ordering=None) -> JacobiFrame:
    """Build the Jacobi frame for ``masses`` and a cluster ``ordering``.

    ``ordering`` is a flat sequence of 0-based particle indices (left comb:
    ``(0, 1, 2)`` means pair (0,1) then particle 2) or a nested binary tree
    such as ``((0, 1), (2, 3))``. Defaults to ``range(N)``.
    """
    masses = tuple(float(m) for m in masses)
    n = len(masses)
    if n < 2 or any(not m > 0 for m in masses):
        raise ValueError("need at least two positive masses")
    try:
        tree = _normalize_tree(ordering, n)
    except TypeError:
        raise ValueError(f"invalid clustering {ordering!r}") from None
    if isinstance(tree, int) or sorted(_leaves(tree)) != list(range(n)):
        raise ValueError(f"invalid clustering {ordering!r}: leaves must be a permutation of 0..{n - 1}")

    m = np.asarray(masses)
    rows, reduced = [], []
    for node in _postorder(tree):
        a, b = _leaves(node[0]), _leaves(node[1])
        ma, mb = m[a].sum(), m[b].sum()
        mu_ab = ma * mb / (ma + mb)
        row = np.zeros(n)
        row[b] += m[b] / mb
        row[a] -= m[a] / ma
        rows.append(math.sqrt(2.0 * mu_ab) * row)
        reduced.append(mu_ab)

    first = _postorder(tree)[0]
    m1, m2 = masses[first[0]], masses[first[1]]
    mu12 = reduced[0]
    alpha = 1.0 / math.sqrt(2.0 * mu12)
    beta = -m2 / ((m1 + m2) * math.sqrt(2.0 * mu12))
    big_m = reduced[1] if n > 2 else None
    gamma = 1.0 / math.sqrt(2.0 * big_m) if n > 2 else None
    mu = {(i, j): masses[i] * masses[j] / (masses[i] + masses[j])
          for i, j in combinations(range(n), 2)}
    return JacobiFrame(masses, tree, np.array(rows), alpha, beta, gamma, big_m, mu)


@dataclass(eq=False, frozen=True)
class KinematicRotation:
    """Orthogonal map ``xi_target = matrix @ xi_source`` between two frames."""

    matrix: np.ndarray

    def apply(self, xi) -> np.ndarray:
        return self.matrix @ np.asarray(xi, dtype=float)


def kinematic_rotation(frame_a: JacobiFrame, frame_b: JacobiFrame) -> KinematicRotation:
    """The map taking frame-a coordinates to frame-b coordinates."""
    if frame_a.masses != frame_b.masses:
        raise ValueError("frames are built over different mass lists")
    return KinematicRotation(frame_b.matrix @ frame_a.inverse_weights @ frame_a.matrix.T)


def pair_separation_map(frame: JacobiFrame, pair: tuple[int, int]) -> np.ndarray:
    """Coefficients ``c`` with ``r_i - r_j = sum_k c_k xi_k`` for ``pair = (i, j)``."""
    i, j = pair
    n = frame.n_particles
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ValueError(f"invalid pair {pair!r}")
    lab = frame.inverse_weights @ frame.matrix.T
    return lab[i] - lab[j]


def kinetic_check(frame: JacobiFrame, rotation) -> float:
    """Max deviation of the rotated kinetic form from ``sum_k |p_k|^2``.

    In frame coordinates the kinetic form is the identity; under
    ``xi -> M xi`` it becomes ``M^T M`` (and ``M M^T`` for the inverse map).
    """
    mat = rotation.matrix if isinstance(rotation, KinematicRotation) else np.asarray(rotation)
    if mat.shape != (frame.dim, frame.dim):
        raise ValueError(f"rotation of shape {mat.shape} does not act on a {frame.dim}-coordinate frame")
    eye = np.eye(frame.dim)
    return float(max(np.abs(mat.T @ mat - eye).max(), np.abs(mat @ mat.T - eye).max()))


def frame_metric_residual(frame: JacobiFrame) -> float:
    """``max |J D J^T - I|``: zero iff the frame makes the kinetic term a plain Laplacian."""
    return float(np.abs(frame.matrix @ frame.inverse_weights @ frame.matrix.T - np.eye(frame.dim)).max())
