"""Distances between empirical path laws.

The Prokhorov distance between two m-atom empirical measures is computed
exactly through Strassen's coupling characterization: pi(P, Q) <= eps iff
some permutation pairs all but floor(eps m) atoms within eps. Feasibility is
monotone in eps, so the least feasible threshold is found by binary search
over the finite set of values where it can change.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import cdist

from wiplab.errors import GridError, RangeError, SizeMismatch, TooLarge
from wiplab.paths import PathEnsemble

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 8
# absorbs rounding in eps * m when eps = k/m
FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2:
            raise RangeError(f"points must form a (count, dimension) array, got shape {points.shape}")
        object.__setattr__(self, "points", points)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True)
class DistanceReport:
    estimator: str
    value: float
    matching: Optional[int] = None
    grid_size: Optional[int] = None
    stderr: Optional[float] = None

    @property
    def aux(self):
        return (self.matching, self.grid_size, self.stderr)


@dataclass(frozen=True)
class KubiliusReport:
    lambda1: float
    lambda2: float
    bound: float
    eps1: float
    eps2: float
    certified: bool = False


def project_paths(ensemble: PathEnsemble, times: Sequence[float]) -> PointCloud:
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise RangeError("projection times must be nonempty and strictly increasing")
    return PointCloud(ensemble.project(times))


def _as_cloud(cloud) -> PointCloud:
    return cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)


def _pair(P, Q):
    P, Q = _as_cloud(P), _as_cloud(Q)
    if P.size != Q.size:
        raise SizeMismatch(f"empirical measures have {P.size} and {Q.size} atoms")
    if P.size == 0:
        raise SizeMismatch("empirical measures need at least one atom")
    if P.dimension != Q.dimension:
        raise SizeMismatch(f"points of dimension {P.dimension} and {Q.dimension}")
    return P, Q


def _candidates(D: np.ndarray) -> np.ndarray:
    m = D.shape[0]
    return np.unique(np.concatenate([D.ravel(), np.arange(m + 1) / m]))


def _required(eps: float, m: int) -> int:
    return m - int(math.floor(eps * m + FLOOR_SLACK))


def matching_size(D: np.ndarray, eps: float) -> int:
    """Largest number of pairs (i, j) matched one to one with D[i, j] <= eps."""
    graph = csr_matrix(D <= eps)
    matched = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.count_nonzero(matched >= 0))


def feasible(D: np.ndarray, eps: float) -> bool:
    return matching_size(D, eps) >= _required(eps, D.shape[0])


def empirical_prokhorov(P, Q) -> DistanceReport:
    P, Q = _pair(P, Q)
    D = cdist(P.points, Q.points, metric="chebyshev")
    grid = _candidates(D)
    lo, hi = 0, grid.size - 1
    # the largest candidate is >= 1, where nothing needs to be matched
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(D, grid[mid]):
            hi = mid
        else:
            lo = mid + 1
    value = float(grid[lo])
    logger.debug("Prokhorov search on %d atoms: %d thresholds, result %.6g", P.size, grid.size, value)
    return DistanceReport("prokhorov", value, matching_size(D, value), int(grid.size))


def brute_force_prokhorov(P, Q) -> DistanceReport:
    """Same threshold grid as ``empirical_prokhorov``, every permutation tried."""
    P, Q = _pair(P, Q)
    m = P.size
    if m > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"brute force handles at most {BRUTE_FORCE_LIMIT} atoms, got {m}")
    D = cdist(P.points, Q.points, metric="chebyshev")
    grid = _candidates(D)
    rows = np.arange(m)
    perms = [np.array(p) for p in itertools.permutations(range(m))]
    for eps in grid:
        best = max(int(np.count_nonzero(D[rows, perm] <= eps)) for perm in perms)
        if best >= _required(eps, m):
            return DistanceReport("prokhorov-brute", float(eps), best, int(grid.size))
    return DistanceReport("prokhorov-brute", float(grid[-1]), m, int(grid.size))


def kolmogorov_distance(samples: Sequence[float], reference_cdf: Callable) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    M = x.size
    if M == 0:
        raise RangeError("Kolmogorov distance needs at least one sample")
    F = np.asarray(reference_cdf(x), dtype=float)
    upper = np.arange(1, M + 1) / M - F
    lower = F - np.arange(M) / M
    return float(np.clip(max(upper.max(), lower.max()), 0.0, 1.0))


def prokhorov_bound_from_moment(eps0: float, q: float) -> float:
    """Prokhorov bound eps0^(q/(q+1)) for laws coupled with |sup difference|_q <= eps0."""
    if eps0 <= 0.0:
        raise RangeError(f"moment distance must be positive, got {eps0}")
    if q < 1.0:
        raise RangeError(f"moment order must be at least 1, got {q}")
    return float(eps0 ** (q / (q + 1.0)))


def prokhorov_bound_from_tail(eps0: float, eps1: float) -> float:
    """Prokhorov bound when P(sup difference > eps0) <= eps1."""
    if eps0 < 0.0 or eps1 < 0.0:
        raise RangeError("tail bound parameters must be nonnegative")
    return float(max(eps0, eps1))


def lq_sup_distance(A: np.ndarray, B: np.ndarray, q: float) -> float:
    """(E sup_i |A_i - B_i|^q)^(1/q) over coupled rows."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise SizeMismatch(f"coupled ensembles of shapes {A.shape} and {B.shape}")
    gaps = np.abs(A - B)
    if gaps.ndim > 1:
        gaps = gaps.max(axis=1)
    return float(np.mean(gaps**q) ** (1.0 / q))


def kubilius_diagnostics(
    marray: np.ndarray,
    sigma: float,
    n: int,
    delta: float,
    eps_grid: Sequence[float],
    vnn: Sequence[float],
) -> KubiliusReport:
    """Lindeberg-type and variance-concentration terms of the martingale WIP rate.

    ``marray`` holds one row of m-values per orbit and ``vnn`` the matching
    V_{n,n}. The reported bound uses constant 1 and is a diagnostic only.
    """
    eps = np.asarray(eps_grid, dtype=float)
    if eps.size == 0:
        raise GridError("the eps grid is empty")
    if not (0.0 <= delta <= 0.75 or delta == 1.0):
        raise RangeError(f"delta must lie in [0, 3/4] or equal 1, got {delta}")
    if sigma <= 0.0:
        raise RangeError(f"sigma must be positive, got {sigma}")
    xi = np.abs(np.asarray(marray, dtype=float)) * (1.0 / (sigma * math.sqrt(n)))
    power = 2.0 + 2.0 * delta
    weighted = xi**power
    lindeberg = np.array([np.mean(np.sum(np.where(xi > e, weighted, 0.0), axis=-1)) for e in eps])
    term1 = np.sqrt(eps) + lindeberg ** (1.0 / (3.0 + 2.0 * delta))
    spread = np.abs(np.asarray(vnn, dtype=float) - 1.0)
    term2 = eps + np.array([np.mean(spread > e * e) for e in eps])
    i1, i2 = int(np.argmin(term1)), int(np.argmin(term2))
    lam1, lam2 = float(term1[i1]), float(term2[i2])
    lam = lam1 + lam2
    bound = lam * abs(math.log(lam)) if lam > 0.0 else 0.0
    return KubiliusReport(lam1, lam2, bound, float(eps[i1]), float(eps[i2]))
