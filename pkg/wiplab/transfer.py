"""Transfer operators, the Gordin decomposition and variance estimators.

Every operator here is the transfer operator L of the invariant measure,
the dual of composition with T:  integral (Lf) w dmu = integral f (w o T) dmu.
It realizes conditional expectation as E(w | T^-1 B) = (Lw) o T, satisfies
L1 = 1, and obeys the pull-out identity L(f . (g o T)) = g . Lf, which is how
the martingale part is handled without sampling it at branch points.

Functions live on node grids: j/N for doubling and Gauss (piecewise linear
interpolation), cell midpoints of a graded Ulam partition for LSV.
"""
import csv
import functools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse, special
from scipy.sparse import linalg as sparse_linalg

from wiplab import rates
from wiplab.errors import (
    AdmissibilityError,
    DegenerateVarianceError,
    DegenerateVarianceWarning,
    GridMismatch,
    NonConvergent,
    RangeError,
)
from wiplab.maps import (
    DEFAULT_BURN_IN,
    MapKind,
    MapModel,
    grid_image,
    orbit,
    orbit_block,
    order_of,
    sample_invariant,
    sample_invariant_batch,
    step,
)
from wiplab.observables import ObservableSpec

logger = logging.getLogger(__name__)

DEFAULT_GRID = 2**12
DEFAULT_ULAM_CELLS = 2**14
DEFAULT_TERMS = 60
LSV_MAX_TERMS = 200
LSV_TERM_TOL = 1e-4
EXACT_TERM_TOL = 1e-12
GAUSS_DIRECT_BRANCHES = 64
# the bottom Ulam cell [0, a] leaks this fraction of its mass per step
ULAM_LEAK = 0.05
BLOCK_ELEMENTS = 2**22


@dataclass(frozen=True)
class GridFunction:
    nodes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.nodes.shape != self.values.shape:
            raise GridMismatch(f"{self.values.size} values on {self.nodes.size} nodes")

    @classmethod
    def uniform(cls, values: np.ndarray) -> "GridFunction":
        values = np.asarray(values, dtype=float)
        return cls(uniform_nodes(values.size - 1), values)

    @classmethod
    def from_callable(cls, f: Callable, nodes: np.ndarray) -> "GridFunction":
        return cls(nodes, np.asarray(f(nodes), dtype=float))

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def on_grid_of(self, other: "GridFunction") -> bool:
        return self.nodes is other.nodes or (
            self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)
        )


@functools.lru_cache(maxsize=8)
def uniform_nodes(N: int) -> np.ndarray:
    nodes = np.arange(N + 1) / N
    nodes.setflags(write=False)
    return nodes


@dataclass(frozen=True)
class UlamModel:
    edges: np.ndarray = field(repr=False)
    matrix: sparse.csr_matrix = field(repr=False)
    stationary: np.ndarray = field(repr=False)

    @property
    def cells(self) -> int:
        return int(self.edges.size - 1)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def density(self) -> np.ndarray:
        return self.stationary / self.widths

    def integrate(self, f: Callable) -> float:
        left, right = self.edges[:-1], self.edges[1:]
        averages = (f(left) + 4.0 * f(self.midpoints) + f(right)) / 6.0
        return float(self.stationary @ averages)


class TransferOperator:
    """The invariant-measure transfer operator of ``map`` on a fixed node grid."""

    def __init__(self, map: MapModel, nodes: np.ndarray, matrix: sparse.csr_matrix, weights: np.ndarray, ulam=None):
        self.map = map
        self.nodes = nodes
        self.matrix = matrix
        self.weights = weights
        self.ulam = ulam
        self.image = grid_image(map, nodes)

    def __repr__(self):
        return f"TransferOperator({self.map.label}, nodes={self.nodes.size})"

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def apply(self, f: GridFunction) -> GridFunction:
        self.check(f)
        return GridFunction(self.nodes, self.apply_values(f.values))

    def grid(self, values: np.ndarray) -> GridFunction:
        return GridFunction(self.nodes, np.asarray(values, dtype=float))

    def sample(self, f: Callable) -> GridFunction:
        return GridFunction.from_callable(f, self.nodes)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def check(self, f: GridFunction):
        if not (f.nodes is self.nodes or (f.nodes.shape == self.nodes.shape and np.array_equal(f.nodes, self.nodes))):
            raise GridMismatch(f"function on {f.size} nodes does not live on the {self!r} grid")


def _interpolation(N: int, points: np.ndarray, scale: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO pieces evaluating the grid-j/N interpolant at ``points``, row r scaled by scale[r]."""
    position = np.clip(points, 0.0, 1.0) * N
    left = np.minimum(np.floor(position).astype(np.int64), N - 1)
    t = position - left
    rows = np.arange(points.size)
    return (
        np.concatenate([rows, rows]),
        np.concatenate([left, left + 1]),
        np.concatenate([scale * (1.0 - t), scale * t]),
    )


def _doubling_matrix(N: int) -> sparse.csr_matrix:
    x = uniform_nodes(N)
    half = np.full(x.size, 0.5)
    r1, c1, d1 = _interpolation(N, x / 2.0, half)
    r2, c2, d2 = _interpolation(N, (x + 1.0) / 2.0, half)
    rows, cols, data = np.concatenate([r1, r2]), np.concatenate([c1, c2]), np.concatenate([d1, d2])
    return sparse.csr_matrix((data, (rows, cols)), shape=(N + 1, N + 1))


def _gauss_matrix(N: int, direct: int = GAUSS_DIRECT_BRANCHES) -> sparse.csr_matrix:
    """Gauss transfer operator on piecewise-linear functions of the j/N grid.

    Branch k carries weight w_k(x) = (1+x)/((k+x)(k+1+x)) at the point
    1/(k+x). The first ``direct`` branches are interpolated one by one; the
    rest are grouped by the grid cell their points fall in, where the
    interpolant is affine and the branch sums close in terms of
        sum_{k>=K} w_k          = (1+x)/(K+x)
        sum_{k>=K} w_k/(k+x)    = (1+x)(zeta(2, K+x) - 1/(K+x)).
    No branch is dropped, so rows sum to one.
    """
    x = uniform_nodes(N)
    pieces = []
    for k in range(1, direct + 1):
        weight = (1.0 + x) / ((k + x) * (k + 1.0 + x))
        pieces.append(_interpolation(N, 1.0 / (k + x), weight))
    rows = [p[0] for p in pieces]
    cols = [p[1] for p in pieces]
    data = [p[2] for p in pieces]
    index = np.arange(x.size)

    def mass(k):
        return np.where(np.isinf(k), 0.0, (1.0 + x) / (k + x))

    def first_moment(k):
        finite = np.where(np.isinf(k), 1.0, k)
        value = (1.0 + x) * (special.zeta(2.0, finite + x) - 1.0 / (finite + x))
        return np.where(np.isinf(k), 0.0, value)

    for j in range(0, N // (direct + 1) + 1):
        k_lo = np.floor(N / (j + 1.0) - x) + 1.0
        k_hi = np.full(x.size, np.inf) if j == 0 else np.floor(N / j - x) + 1.0
        start = np.maximum(k_lo, direct + 1.0)
        stop = np.maximum(k_hi, start)
        d0 = mass(start) - mass(stop)
        d1 = first_moment(start) - first_moment(stop)
        rows += [index, index]
        cols += [np.full(x.size, j), np.full(x.size, j + 1)]
        data += [(1.0 + j) * d0 - N * d1, -j * d0 + N * d1]
    matrix = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N + 1, N + 1)
    )
    matrix.data = np.maximum(matrix.data, 0.0)
    matrix.eliminate_zeros()
    return matrix


def _stationary_by_iteration(matrix: sparse.csr_matrix, start: np.ndarray, tol: float = 1e-15, max_iter: int = 10_000) -> np.ndarray:
    transpose = matrix.T.tocsr()
    w = start / start.sum()
    for _ in range(max_iter):
        nxt = transpose @ w
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - w)) < tol:
            return nxt
        w = nxt
    logger.warning("stationary weights did not settle within %d iterations", max_iter)
    return w


def _stationary_by_solve(matrix: sparse.csr_matrix) -> np.ndarray:
    size = matrix.shape[0]
    system = (matrix.T - sparse.identity(size, format="csr")).tolil()
    system[size - 1, :] = np.ones(size)
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    pi = sparse_linalg.spsolve(system.tocsc(), rhs)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def lsv_edges(gamma: float, cells: int) -> np.ndarray:
    """Cell edges: a bottom cell [0, a], geometric cells up to 1/2, uniform cells on [1/2, 1]."""
    left = (3 * cells) // 4
    right = cells - left
    floor = min(1e-3, 0.5 * ULAM_LEAK ** (1.0 / gamma))
    geometric = floor * (0.5 / floor) ** (np.arange(left) / (left - 1))
    geometric[-1] = 0.5
    uniform = 0.5 + 0.5 * np.arange(1, right + 1) / right
    uniform[-1] = 1.0
    return np.concatenate([[0.0], geometric, uniform])


@functools.lru_cache(maxsize=4)
def ulam_model(map: MapModel, cells: int = DEFAULT_ULAM_CELLS) -> UlamModel:
    """Ulam discretization of the LSV map on graded cells.

    The map is taken affine inside each cell, so P[i, j] is the fraction of
    the image interval T(cell i) lying in cell j.
    """
    if map.kind is not MapKind.LSV:
        raise RangeError("Ulam models are built for the LSV map")
    gamma = map.gamma
    edges = lsv_edges(gamma, cells)
    lo, hi = edges[:-1], edges[1:]
    on_left = lo < 0.5
    alpha = np.where(on_left, lo * (1.0 + (2.0 * lo) ** gamma), 2.0 * lo - 1.0)
    beta = np.where(on_left, hi * (1.0 + (2.0 * np.minimum(hi, 0.5)) ** gamma), 2.0 * hi - 1.0)
    first = np.clip(np.searchsorted(edges, alpha, side="right") - 1, 0, cells - 1)
    last = np.clip(np.searchsorted(edges, beta, side="left") - 1, first, cells - 1)
    counts = last - first + 1
    rows = np.repeat(np.arange(cells), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = np.repeat(first, counts) + offsets
    overlap = np.minimum(beta[rows], edges[cols + 1]) - np.maximum(alpha[rows], edges[cols])
    data = np.maximum(overlap, 0.0) / (beta - alpha)[rows]
    matrix = sparse.csr_matrix((data, (rows, cols)), shape=(cells, cells))
    matrix.eliminate_zeros()
    matrix = sparse.diags(1.0 / np.asarray(matrix.sum(axis=1)).ravel()) @ matrix
    matrix = matrix.tocsr()
    stationary = _stationary_by_solve(matrix)
    logger.info("Ulam model for gamma=%s: %d cells, %d transitions", gamma, cells, matrix.nnz)
    return UlamModel(edges, matrix, stationary)


@functools.lru_cache(maxsize=8)
def transfer_operator(map: MapModel, size: Optional[int] = None) -> TransferOperator:
    """Operator on ``size`` grid intervals (doubling, Gauss) or Ulam cells (LSV)."""
    if map.kind is MapKind.DOUBLING:
        N = size or DEFAULT_GRID
        matrix = _doubling_matrix(N)
        start = np.full(N + 1, 1.0)
        start[[0, -1]] = 0.5
        return TransferOperator(map, uniform_nodes(N), matrix, _stationary_by_iteration(matrix, start))
    if map.kind is MapKind.GAUSS:
        N = size or DEFAULT_GRID
        matrix = _gauss_matrix(N)
        nodes = uniform_nodes(N)
        start = 1.0 / (1.0 + nodes)
        start[[0, -1]] *= 0.5
        return TransferOperator(map, nodes, matrix, _stationary_by_iteration(matrix, start))
    ulam = ulam_model(map, size or DEFAULT_ULAM_CELLS)
    pi = np.maximum(ulam.stationary, np.finfo(float).tiny)
    matrix = (sparse.diags(1.0 / pi) @ ulam.matrix.T @ sparse.diags(pi)).tocsr()
    nodes = ulam.midpoints
    nodes.setflags(write=False)
    return TransferOperator(map, nodes, matrix, ulam.stationary, ulam=ulam)


def operator_for(map: MapModel, f: GridFunction) -> TransferOperator:
    size = f.size if map.kind is MapKind.LSV else f.size - 1
    op = transfer_operator(map, size)
    op.check(f)
    return op


def apply_transfer(map: MapModel, f: GridFunction) -> GridFunction:
    return operator_for(map, f).apply(f)


@dataclass(frozen=True)
class GordinDecomposition:
    operator: TransferOperator = field(repr=False)
    v: GridFunction = field(repr=False)
    chi: GridFunction = field(repr=False)
    m: GridFunction = field(repr=False)
    conditional_square: GridFunction = field(repr=False)
    K: int
    sigma2_m: float
    martingale_residual: float
    coboundary_residual: float
    tail_estimate: float
    contraction: float
    offset: float
    term_norms: Tuple[float, ...] = field(repr=False, default=())
    source: Optional[ObservableSpec] = field(repr=False, default=None)

    @property
    def map(self) -> MapModel:
        return self.operator.map

    def m_at(self, x: np.ndarray) -> np.ndarray:
        """m = v - chi o T + chi at arbitrary points (centered v included)."""
        v = self.v_at(x)
        return v - self.chi(_image(self.map, x)) + self.chi(x)

    def v_at(self, x: np.ndarray) -> np.ndarray:
        return self.source(x) - self.offset


def _image(map: MapModel, x: np.ndarray) -> np.ndarray:
    return step(map, np.asarray(x, dtype=float))


def gordin_decompose(
    map: MapModel,
    v: ObservableSpec,
    K: Optional[int] = None,
    size: Optional[int] = None,
    tol: Optional[float] = None,
) -> GordinDecomposition:
    """Split v into m + chi o T - chi with chi the truncated series sum_{k=1..K} L^k v.

    The grid copy of v is re-centered on the operator's quadrature weights
    and the shift is kept as ``offset``. Raises NonConvergent when the term
    norm has not fallen tenfold over the last half of the applied terms and
    is still above ``tol``.
    """
    op = transfer_operator(map, size)
    lsv = map.kind is MapKind.LSV
    if K is None:
        K = LSV_MAX_TERMS if lsv else DEFAULT_TERMS
    if K < 1:
        raise RangeError(f"truncation depth must be positive, got {K}")
    if tol is None:
        tol = LSV_TERM_TOL if lsv else EXACT_TERM_TOL

    raw = np.asarray(v(op.nodes), dtype=float)
    offset = op.integrate(raw)
    vc = raw - offset

    chi = np.zeros_like(vc)
    term = vc
    norms: List[float] = [float(np.max(np.abs(vc)))]
    for _ in range(K):
        term = op.apply_values(term)
        chi += term
        norms.append(float(np.max(np.abs(term))))
        if lsv and norms[-1] < tol:
            break
    used = len(norms) - 1
    window = max(1, used // 2)
    latest, earlier = norms[-1], norms[-1 - window]
    if latest > tol and latest > earlier / 10.0:
        raise NonConvergent(
            f"|L^k v| fell from {earlier:.3g} to {latest:.3g} over the last {window} terms",
            terms=used,
            map=map.label,
        )
    contraction = (latest / earlier) ** (1.0 / window) if earlier > 0 and latest > 0 else 0.0
    tail = latest / (1.0 - contraction) if contraction < 1.0 else math.inf
    logger.debug("decomposition of %s on %s: %d terms, contraction %.3g", v.label, map.label, used, contraction)

    chi_f = op.grid(chi)
    chi_t = chi_f(op.image)
    m = vc - chi_t + chi
    a = vc + chi
    # L(m^2) = L(a^2) - 2 chi L(a) + chi^2 by the pull-out identity, with m = a - chi o T
    lm2 = op.apply_values(a * a) - 2.0 * chi * op.apply_values(a) + chi * chi
    martingale = float(np.max(np.abs(op.apply_values(vc) + op.apply_values(chi) - chi)))
    coboundary = float(np.max(np.abs(vc - m - chi_t + chi)))
    sigma2 = max(op.integrate(m * m), 0.0)

    dec = GordinDecomposition(
        operator=op,
        v=op.grid(vc),
        chi=chi_f,
        m=op.grid(m),
        conditional_square=op.grid(lm2),
        K=used,
        sigma2_m=sigma2,
        martingale_residual=martingale,
        coboundary_residual=coboundary,
        tail_estimate=float(tail),
        contraction=float(contraction),
        offset=float(offset),
        term_norms=tuple(norms),
        source=v,
    )
    return dec


@dataclass(frozen=True)
class GreenKubo:
    sigma2: float
    stderr: float
    variance: float
    correlation_sum: float
    correlation_stderr: float
    terms: np.ndarray = field(repr=False)
    method: str = "quadrature"


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    stderr: float
    samples: int


def _warn_if_degenerate(value: float, stderr: float, what: str):
    if value < 3.0 * stderr or (stderr == 0.0 and abs(value) <= 1e-14):
        warnings.warn(f"{what} = {value:.3g} is within 3 standard errors of 0", DegenerateVarianceWarning, stacklevel=3)


def orbit_blocks(
    map: MapModel,
    length: int,
    samples: int,
    rng: np.random.Generator,
    burn_in: int = DEFAULT_BURN_IN,
) -> Iterator[np.ndarray]:
    """Invariant orbits of ``length`` points, in row blocks bounded in memory."""
    block = max(1, BLOCK_ELEMENTS // max(length, 1))
    done = 0
    while done < samples:
        size = min(block, samples - done)
        starts = sample_invariant_batch(map, rng, size, burn_in=burn_in)
        yield orbit_block(map, starts, length, rng=rng)
        done += size


def map_values(v: Callable, blocks: Iterator[np.ndarray]) -> Iterator[np.ndarray]:
    for block in blocks:
        yield v(block)


def green_kubo_sigma2(
    map: MapModel,
    v: ObservableSpec,
    N: int,
    samples: int = 100_000,
    rng: Optional[np.random.Generator] = None,
    method: str = "auto",
    size: Optional[int] = None,
) -> GreenKubo:
    """Truncated Green–Kubo sum  int v^2 + 2 sum_{n=1..N} int v (v o T^n).

    Doubling uses quadrature of (L^n v) v on the operator grid; the other maps
    average over invariant samples (or pass method="quadrature").
    """
    if N < 0:
        raise RangeError(f"number of correlation terms must be nonnegative, got {N}")
    if method == "auto":
        method = "quadrature" if map.kind is MapKind.DOUBLING else "montecarlo"
    if method == "quadrature":
        op = transfer_operator(map, size)
        raw = np.asarray(v(op.nodes), dtype=float)
        vc = raw - op.integrate(raw)
        terms = np.empty(N + 1)
        current = vc
        terms[0] = op.integrate(vc * vc)
        for n in range(1, N + 1):
            current = op.apply_values(current)
            terms[n] = op.integrate(current * vc)
        sigma2 = float(terms[0] + 2.0 * terms[1:].sum())
        result = GreenKubo(sigma2, 0.0, float(terms[0]), float(terms[1:].sum()), 0.0, terms, "quadrature")
    else:
        if rng is None:
            raise RangeError("Monte Carlo Green–Kubo needs a random generator")
        sums = np.zeros(N + 1)
        total, total_sq, corr_sq = 0.0, 0.0, 0.0
        for values in map_values(v, orbit_blocks(map, N + 1, samples, rng)):
            products = values[:, :1] * values
            sums += products.sum(axis=0)
            cross = products[:, 1:].sum(axis=1)
            per = products[:, 0] + 2.0 * cross
            total += per.sum()
            total_sq += (per * per).sum()
            corr_sq += (cross * cross).sum()
        terms = sums / samples
        sigma2 = total / samples
        corr = float(terms[1:].sum())
        stderr = math.sqrt(max(total_sq / samples - sigma2**2, 0.0) / max(samples - 1, 1))
        corr_err = math.sqrt(max(corr_sq / samples - corr**2, 0.0) / max(samples - 1, 1))
        result = GreenKubo(float(sigma2), stderr, float(terms[0]), corr, corr_err, terms, "montecarlo")
    _warn_if_degenerate(result.sigma2, result.stderr, "Green–Kubo variance")
    return result


def correlation_sum(
    map: MapModel, v: ObservableSpec, N: int, samples: int = 100_000, rng: Optional[np.random.Generator] = None
) -> Tuple[float, float]:
    """sum_{n=1..N} int v (v o T^n) dmu with its standard error."""
    gk = green_kubo_sigma2(map, v, N, samples=samples, rng=rng)
    return gk.correlation_sum, gk.correlation_stderr


def batch_sigma2(map: MapModel, v: ObservableSpec, n: int, samples: int, rng: np.random.Generator) -> VarianceEstimate:
    """Monte Carlo n^-1 E[v_n^2] over invariant starts."""
    if n < 1:
        raise RangeError(f"block length must be positive, got {n}")
    per = np.concatenate([values.sum(axis=1) ** 2 / n for values in map_values(v, orbit_blocks(map, n, samples, rng))])
    stderr = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else 0.0
    return VarianceEstimate(float(per.mean()), stderr, int(per.size))


def vnk_from_orbit(dec: GordinDecomposition, values: np.ndarray, reverse: bool = False) -> np.ndarray:
    """V_{n,k}, k = 0..n, from an orbit y, Ty, ..., T^n y of n + 1 points."""
    sigma2 = dec.sigma2_m
    if sigma2 <= 0.0:
        raise DegenerateVarianceError("the martingale part has zero variance")
    n = values.size - 1
    # g(T^j y) = (L m^2)(T^{j+1} y) - sigma^2
    g = dec.conditional_square(values[1:]) - sigma2
    if reverse:
        g = g[::-1]
    V = np.empty(n + 1)
    V[0] = 0.0
    V[1:] = np.arange(1, n + 1) / n + np.cumsum(g) * (1.0 / (sigma2 * n))
    return V


def vnk_profile(
    map: MapModel,
    dec: GordinDecomposition,
    y0: float,
    n: int,
    rng: Optional[np.random.Generator] = None,
    reverse: bool = False,
) -> np.ndarray:
    if n < 1:
        raise RangeError(f"n must be positive, got {n}")
    values = orbit(map, y0, n + 1, rng=rng if map.refreshes else None).values
    return vnk_from_orbit(dec, values, reverse=reverse)


@dataclass(frozen=True)
class VnkScaling:
    n: np.ndarray
    rms: np.ndarray
    fit: Optional[rates.RateFit]


def vnk_scaling(
    map: MapModel, dec: GordinDecomposition, n_grid: Sequence[int], starts: int, rng: np.random.Generator
) -> VnkScaling:
    """RMS over invariant starts of max_k |V_{n,k} - k/n|, with its log-log slope in n."""
    ns = np.asarray(n_grid, dtype=np.int64)
    rms = np.empty(ns.size)
    for i, n in enumerate(ns):
        deviations = np.empty(starts)
        uniform = np.arange(n + 1) / n
        for s in range(starts):
            y0 = sample_invariant(map, rng)
            deviations[s] = np.max(np.abs(vnk_profile(map, dec, y0, int(n), rng=rng) - uniform))
        rms[i] = math.sqrt(float(np.mean(deviations**2)))
        logger.info("V_{n,k} concentration at n=%d: rms %.4g", n, rms[i])
    fit = rates.fit_rate(ns, rms) if ns.size >= 3 else None
    return VnkScaling(ns, rms, fit)


@dataclass(frozen=True)
class MomentTable:
    n: np.ndarray
    ratio: np.ndarray
    q: float


def check_admissible(map: MapModel, q: float):
    if q < 2.0:
        raise AdmissibilityError(f"moment order q={q} must be at least 2")
    order = order_of(map)
    if math.isfinite(order) and q >= 2.0 * (order - 1.0):
        raise AdmissibilityError(
            f"q={q} is outside the admissible range q < 2(p-1) for p < {order:g}", q=q, order=order
        )


def moment_scaling_check(
    map: MapModel, v: ObservableSpec, q: float, n_grid: Sequence[int], samples: int, rng: np.random.Generator
) -> MomentTable:
    """Monte Carlo | max_{j<=n} |v_j| |_q / n^(1/2) along the n grid."""
    check_admissible(map, q)
    ns = np.asarray(n_grid, dtype=np.int64)
    ratio = np.empty(ns.size)
    for i, n in enumerate(ns):
        acc = 0.0
        for values in map_values(v, orbit_blocks(map, int(n), samples, rng)):
            running = np.max(np.abs(np.cumsum(values, axis=1)), axis=1)
            acc += float(np.sum(running**q))
        ratio[i] = (acc / samples) ** (1.0 / q) / math.sqrt(n)
    return MomentTable(ns, ratio, float(q))


def duality_gap(
    map: MapModel,
    f: GridFunction,
    w: Callable[[np.ndarray], np.ndarray],
    samples: int,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """E[(Lf)(x) w(x)] - E[f(x) w(Tx)] over invariant x, with its standard error."""
    lf = apply_transfer(map, f)
    x = sample_invariant_batch(map, rng, samples)
    tx = _image(map, x)
    diff = lf(x) * w(x) - f(x) * w(tx)
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(samples))


def to_csv(obj: Union[GridFunction, UlamModel], path: str):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        if isinstance(obj, UlamModel):
            writer.writerow(["cell_left", "cell_right", "density"])
            for lo, hi, d in zip(obj.edges[:-1], obj.edges[1:], obj.density):
                writer.writerow([f"{lo:.17g}", f"{hi:.17g}", f"{d:.17g}"])
        else:
            writer.writerow(["node", "value"])
            for x, y in zip(obj.nodes, obj.values):
                writer.writerow([f"{x:.17g}", f"{y:.17g}"])
