"""Localisation observables, the no-clustering verdict and the tail-bound probe."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from .fewbody import GaussianState, SpreadingProfile, expectation_pair_cdf, expectation_rho_sq
from .twobody import RadialGrid

# fixed margins of the finite-data no-clustering verdict
LOCALIZED_FACTOR = 0.5
NOISE_BAND = 0.02
MIN_ROWS = 4
MIN_DECADES = 2.0

TAIL_GRID = RadialGrid(40.0, 1500)


@dataclass(frozen=True)
class PairObservableRequest:
    pair: tuple[int, int]
    l_values: tuple[float, ...]

    def __post_init__(self):
        i, j = self.pair
        if i == j or min(i, j) < 0:
            raise ValueError(f"invalid pair {self.pair!r}")
        ls = tuple(float(x) for x in self.l_values)
        if not ls or any(not x > 0 for x in ls):
            raise ValueError("L values must be > 0")
        if list(ls) != sorted(ls):
            raise ValueError("L values must be sorted")
        object.__setattr__(self, "pair", (min(i, j), max(i, j)))
        object.__setattr__(self, "l_values", ls)


def _require_normalized(state: GaussianState, tol: float = 1e-8):
    if abs(state.norm - 1.0) > tol:
        raise ValueError(f"state is not normalised (norm = {state.norm:.6g})")


def pair_probability(state: GaussianState, pair, length):
    """``<psi| chi_L(r_i - r_j) |psi>`` from the closed-form Gaussian pair-distance distribution."""
    _require_normalized(state)
    lengths = np.atleast_1d(np.asarray(length, dtype=float))
    if np.any(lengths < 0):
        raise ValueError("L must be >= 0")
    out = expectation_pair_cdf(state, tuple(pair), lengths)
    return float(out[0]) if np.ndim(length) == 0 else out


def pair_probabilities(state: GaussianState, request: PairObservableRequest) -> np.ndarray:
    return pair_probability(state, request.pair, np.array(request.l_values))


def hyperradius_sq(state: GaussianState) -> float:
    """``<sum_k |xi_k|^2>`` of a normalised state."""
    _require_normalized(state)
    return expectation_rho_sq(state)


@dataclass(frozen=True)
class NoClusteringReport:
    verdicts: dict
    length: float
    localized_factor: float = LOCALIZED_FACTOR
    noise_band: float = NOISE_BAND
    decades: float = 0.0
    series: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdicts"] = {f"{i + 1}{j + 1}": v for (i, j), v in self.verdicts.items()}
        out["series"] = {f"{i + 1}{j + 1}": list(v) for (i, j), v in self.series.items()}
        return out


def no_clustering_report(profile: SpreadingProfile, pairs=None, l_values=None) -> NoClusteringReport:
    """Per-pair finite-data verdict along a trace approaching the threshold.

    Rows are ordered by decreasing ``|E|``. With ``P`` the probability for
    the largest configured ``L``: ``localized`` if ``P`` at the smallest
    ``|E|`` is at least ``LOCALIZED_FACTOR`` times ``P`` at the largest;
    otherwise ``spreading`` if ``P`` never rises by more than
    ``NOISE_BAND`` from one row to the next; otherwise ``inconclusive``.
    """
    rows = profile.rows
    if len(rows) < MIN_ROWS:
        raise ValueError(f"profile needs at least {MIN_ROWS} rows, got {len(rows)}")
    energies = np.abs(profile.energies)
    if np.any(energies == 0):
        raise ValueError("profile contains a zero energy")
    decades = float(np.log10(energies.max() / energies.min()))
    if decades < MIN_DECADES:
        raise ValueError(f"|E| spans {decades:.2f} decades; at least {MIN_DECADES:g} required")
    pairs = profile.pairs if pairs is None else tuple(tuple(p) for p in pairs)
    length = float(max(profile.l_values if l_values is None else l_values))
    order = np.argsort(-energies, kind="stable")
    verdicts, series = {}, {}
    for pair in pairs:
        p = profile.pair_probability(pair, length)[order]
        if p[-1] >= LOCALIZED_FACTOR * p[0]:
            verdict = "localized"
        elif np.all(np.diff(p) <= NOISE_BAND):
            verdict = "spreading"
        else:
            verdict = "inconclusive"
        verdicts[pair] = verdict
        series[pair] = tuple(float(x) for x in p)
    return NoClusteringReport(verdicts, length, decades=decades, series=series)


def tail_bound_probe(f, q_values, grid: RadialGrid = TAIL_GRID) -> list[float]:
    """``|| chi_{r >= q} |F| (H_0 + 1)^-1 ||`` in the s-wave sector for each ``q``.

    Computed as the largest singular value of the finite-difference matrix
    ``diag(chi |F|) (T + 1)^-1`` on ``grid``.
    """
    r = grid.nodes
    absf = np.abs(np.asarray(f(r), dtype=float))
    resolvent = np.linalg.inv(grid.dense_laplacian() + np.eye(grid.n))
    out = []
    for q in q_values:
        weight = np.where(r >= q, absf, 0.0)
        if not np.any(weight):
            out.append(0.0)
            continue
        m = weight[:, None] * resolvent
        top = eigvalsh(m @ m.T, subset_by_index=[grid.n - 1, grid.n - 1])[0]
        out.append(float(np.sqrt(max(top, 0.0))))
    return out


# margins of the size-scaling verdict
BOUNDED_FACTOR = 2.0
MIN_ENERGY_RATIO = 100.0
HALO_SLOPE = -1.0
SLOPE_BAND = 0.25


@dataclass(frozen=True)
class SizeScalingReport:
    rho_ratio: float      # max / min of <rho^2> over the trace
    energy_ratio: float   # max / min of |E|
    slope: float          # least-squares slope of log <rho^2> against log |E|
    verdict: str          # "bounded", "diverging" or "undetermined"

    def to_dict(self) -> dict:
        return asdict(self)


def size_scaling_report(profile: SpreadingProfile) -> SizeScalingReport:
    """Does ``<rho^2>`` stay bounded or grow like ``1/|E|`` as ``|E|`` shrinks?

    ``bounded`` if ``|E|`` spans at least a factor ``MIN_ENERGY_RATIO`` while
    ``<rho^2>`` varies by less than ``BOUNDED_FACTOR``; ``diverging`` if the
    log-log slope lies within ``SLOPE_BAND`` of ``HALO_SLOPE``.
    """
    if len(profile.rows) < 2:
        raise ValueError("profile needs at least two rows")
    e = np.abs(profile.energies)
    rho = profile.rho_sq
    rho_ratio = float(rho.max() / rho.min())
    energy_ratio = float(e.max() / e.min())
    slope = float(np.polyfit(np.log(e), np.log(rho), 1)[0])
    if energy_ratio >= MIN_ENERGY_RATIO and rho_ratio < BOUNDED_FACTOR:
        verdict = "bounded"
    elif abs(slope - HALO_SLOPE) <= SLOPE_BAND:
        verdict = "diverging"
    else:
        verdict = "undetermined"
    return SizeScalingReport(rho_ratio, energy_ratio, slope, verdict)
