"""Piecewise-linear path processes on [0, 1] and seeded path ensembles."""
import csv
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from wiplab import rng as streams
from wiplab.errors import DegenerateVarianceError, LengthError, RangeError, TimeChangedPath
from wiplab.maps import DEFAULT_BURN_IN, MapModel, path_orbit
from wiplab.observables import ObservableSpec

logger = logging.getLogger(__name__)

DEFAULT_ENSEMBLE = 4096
DEFAULT_PROJECTION_DIM = 8
DEFAULT_CHUNK = 64


@dataclass(frozen=True)
class SamplePath:
    """Values at t = j/n, or at explicit nondecreasing ``times`` from 0 to 1."""

    values: np.ndarray = field(repr=False)
    times: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise LengthError(f"a path needs at least two nodes, got {values.size}")
        object.__setattr__(self, "values", values)
        if self.times is not None:
            times = np.asarray(self.times, dtype=float)
            if times.shape != values.shape:
                raise LengthError(f"{times.size} node times for {values.size} values")
            if times[0] != 0.0 or times[-1] != 1.0 or np.any(np.diff(times) < 0):
                raise RangeError("node times must be nondecreasing from 0 to 1")
            object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return int(self.values.size - 1)

    @property
    def time_changed(self) -> bool:
        return self.times is not None

    @property
    def nodes(self) -> np.ndarray:
        return self.times if self.times is not None else np.arange(self.n + 1) / self.n

    def evaluate(self, t):
        return np.interp(t, self.nodes, self.values)

    def scaled(self, factor: float) -> "SamplePath":
        return SamplePath(self.values * factor, self.times)


@dataclass(frozen=True)
class PathFunctionals:
    terminal: float
    sup: float
    inf: float
    sup_abs: float
    integral: float
    at: np.ndarray = field(repr=False)


@dataclass
class PathEnsemble:
    paths: List[SamplePath]
    descriptor: Dict[str, object]
    seed: int

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    @property
    def n(self) -> int:
        return self.paths[0].n if self.paths else 0

    def project(self, times: Sequence[float]) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if not self.paths:
            return np.empty((0, times.size))
        return np.vstack([p.evaluate(times) for p in self.paths])

    def export_csv(self, path: str):
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["path_id", "node_index", "t", "value"])
            for pid, sample in enumerate(self.paths):
                for j, (t, value) in enumerate(zip(sample.nodes, sample.values)):
                    writer.writerow([pid, j, f"{t:.17g}", f"{value:.17g}"])


def build_wn(vvalues: Sequence[float], n: int) -> SamplePath:
    """W_n(j/n) = n^(-1/2) sum_{i<j} v_i."""
    if n < 1:
        raise LengthError(f"n must be positive, got {n}")
    v = np.asarray(vvalues, dtype=float)
    if v.size < n:
        raise LengthError(f"{v.size} observable values given, {n} needed")
    return SamplePath(partial_sum_rows(v[None, :n], n)[0])


def partial_sum_rows(v: np.ndarray, n: int) -> np.ndarray:
    """Row-wise W_n node values for a (rows, n) array of observable values."""
    out = np.zeros((v.shape[0], n + 1))
    np.cumsum(v, axis=1, out=out[:, 1:])
    return out * (1.0 / np.sqrt(n))


def clamp_time_change(V: Sequence[float]) -> Tuple[np.ndarray, float]:
    """Drop negative increments of V; returns the clamped profile and the total mass removed."""
    V = np.asarray(V, dtype=float)
    steps = np.diff(V)
    negative = steps < 0.0
    if not negative.any():
        return V, 0.0
    removed = float(-steps[negative].sum())
    clamped = np.concatenate([[V[0]], V[0] + np.cumsum(np.maximum(steps, 0.0))])
    logger.warning("clamped %d negative V_{n,k} increments (total %.3g)", int(negative.sum()), removed)
    return clamped, removed


def build_xn(mvalues: Sequence[float], V: Sequence[float], sigma: float) -> SamplePath:
    """Node k of X_n sits at time V_k/V_n with value n^(-1/2) sigma^-1 sum_{j<=k} m_j."""
    m = np.asarray(mvalues, dtype=float)
    n = m.size
    if n < 1:
        raise LengthError("X_n needs at least one martingale value")
    V, _ = clamp_time_change(V)
    if V.size != n + 1:
        raise LengthError(f"time change has {V.size} entries, {n + 1} needed")
    if sigma <= 0.0:
        raise DegenerateVarianceError(f"sigma must be positive, got {sigma}")
    if V[-1] <= 0.0:
        raise DegenerateVarianceError(f"V_(n,n) = {V[-1]:.3g} leaves no time to run X_n")
    times = V / V[-1]
    times[0] = 0.0
    values = np.zeros(n + 1)
    np.cumsum(m, out=values[1:])
    return SamplePath(values * (1.0 / (sigma * math.sqrt(n))), times)


def time_reverse_g(u: SamplePath) -> SamplePath:
    """g(u)(t) = u(1) - u(1 - t) on the uniform grid."""
    if u.time_changed:
        raise TimeChangedPath("time reversal needs a path on the uniform grid")
    return SamplePath(u.values[-1] - u.values[::-1])


def noise_increments(sigma2: float, dt: float, z: np.ndarray) -> np.ndarray:
    """Brownian increments of variance sigma2 * dt from standard normals."""
    return np.sqrt(sigma2 * dt) * z


def brownian_path(sigma2: float, n: int, rng: np.random.Generator) -> SamplePath:
    if sigma2 < 0.0:
        raise RangeError(f"variance must be nonnegative, got {sigma2}")
    values = np.zeros(n + 1)
    np.cumsum(noise_increments(sigma2, 1.0 / n, rng.standard_normal(n)), out=values[1:])
    return SamplePath(values)


def brownian_sup_tail(a: float, sigma2: float) -> float:
    """P(sup_[0,1] W >= a) for Brownian motion of variance sigma2, by reflection."""
    if a < 0.0:
        raise RangeError(f"level must be nonnegative, got {a}")
    if sigma2 <= 0.0:
        raise RangeError(f"variance must be positive, got {sigma2}")
    return float(special.erfc(a / math.sqrt(2.0 * sigma2)))


def path_functionals(u: SamplePath, times: Optional[Sequence[float]] = None) -> PathFunctionals:
    at = u.evaluate(np.asarray(times, dtype=float)) if times is not None else np.empty(0)
    return PathFunctionals(
        terminal=float(u.values[-1]),
        sup=float(u.values.max()),
        inf=float(u.values.min()),
        sup_abs=float(np.abs(u.values).max()),
        integral=float(integrate.trapezoid(u.values, u.nodes)),
        at=at,
    )


def sup_distance(u: SamplePath, w: SamplePath) -> float:
    """Sup distance between two piecewise-linear paths, exact on the union of their nodes."""
    t = np.union1d(u.nodes, w.nodes)
    return float(np.max(np.abs(u.evaluate(t) - w.evaluate(t))))


def dyadic_times(d: int = DEFAULT_PROJECTION_DIM) -> np.ndarray:
    if d < 1:
        raise RangeError(f"projection dimension must be positive, got {d}")
    return np.arange(1, d + 1) / d


def project(values: np.ndarray, nodes: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Linear interpolation of every row of ``values`` (on common ``nodes``) at ``times``."""
    right = np.clip(np.searchsorted(nodes, times, side="right"), 1, nodes.size - 1)
    left = right - 1
    width = nodes[right] - nodes[left]
    frac = np.where(width > 0, (times - nodes[left]) / np.where(width > 0, width, 1.0), 0.0)
    return values[:, left] * (1.0 - frac) + values[:, right] * frac


def uniform_grid(n: int) -> np.ndarray:
    return np.arange(n + 1) / n


def wn_block(map: MapModel, v: ObservableSpec, n: int, seed: int, start: int, stop: int, burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    """W_n node values for path indices start..stop-1, each from its own fast stream."""
    rows = np.empty((stop - start, n))
    for row, index in enumerate(range(start, stop)):
        rows[row] = v(path_orbit(map, n, streams.stream(seed, streams.FAST, n, index), burn_in=burn_in))
    return partial_sum_rows(rows, n)


def brownian_block(sigma2: float, n: int, seed: int, start: int, stop: int) -> np.ndarray:
    out = np.zeros((stop - start, n + 1))
    for row, index in enumerate(range(start, stop)):
        z = streams.stream(seed, streams.NOISE, n, index).standard_normal(n)
        np.cumsum(noise_increments(sigma2, 1.0 / n, z), out=out[row, 1:])
    return out


def _projected(block: Callable[[int, int], np.ndarray], nodes: np.ndarray, times: np.ndarray, bounds: Tuple[int, int]) -> np.ndarray:
    return project(block(*bounds), nodes, times)


def chunk_bounds(count: int, chunk: int = DEFAULT_CHUNK) -> List[Tuple[int, int]]:
    return [(lo, min(lo + chunk, count)) for lo in range(0, count, chunk)]


def projected_ensemble(
    block: Callable[[int, int], np.ndarray],
    nodes: np.ndarray,
    times: Sequence[float],
    count: int,
    mapper: Callable = map,
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """Projections of ``count`` paths at ``times``, assembled in path-index order.

    ``block(start, stop)`` returns node values for a range of path indices;
    ``mapper`` may be a process pool's ``map`` since every index owns its stream.
    """
    task = partial(_projected, block, nodes, np.asarray(times, dtype=float))
    parts = list(mapper(task, chunk_bounds(count, chunk)))
    return np.vstack(parts) if parts else np.empty((0, len(times)))


def wn_ensemble(map: MapModel, v: ObservableSpec, n: int, count: int, seed: int) -> PathEnsemble:
    values = wn_block(map, v, n, seed, 0, count)
    paths = [SamplePath(row) for row in values]
    return PathEnsemble(paths, {"process": "W_n", "map": map.label, "observable": v.label, "n": n}, seed)


def offset_block(block: Callable[[int, int], np.ndarray], offset: int, start: int, stop: int) -> np.ndarray:
    """``block`` over path indices start + offset .. stop + offset - 1."""
    return block(start + offset, stop + offset)


def coupled_paths(dec, orbit_values: np.ndarray) -> Tuple[SamplePath, SamplePath]:
    """W_n and sigma X_n built from one orbit of n + 1 points.

    X_n runs the martingale increments in reversed time, m(T^{n-1} y) first,
    with the matching reversed V_{n,k} as its clock.
    """
    from wiplab.transfer import vnk_from_orbit

    n = orbit_values.size - 1
    head = orbit_values[:n]
    wn = build_wn(dec.v_at(head), n)
    sigma = math.sqrt(dec.sigma2_m)
    V = vnk_from_orbit(dec, orbit_values, reverse=True)
    xn = build_xn(dec.m_at(head)[::-1], V, sigma)
    return wn, xn.scaled(sigma)


def martingale_coupling_gap(dec, n: int, rng: np.random.Generator, burn_in: int = DEFAULT_BURN_IN) -> float:
    """sup_t |g(W_n)(t) - sigma X_n(t)| along one invariant orbit."""
    values = path_orbit(dec.map, n + 1, rng, burn_in=burn_in)
    wn, sxn = coupled_paths(dec, values)
    return sup_distance(time_reverse_g(wn), sxn)


def coupling_block(dec, n: int, seed: int, start: int, stop: int) -> np.ndarray:
    return np.array(
        [martingale_coupling_gap(dec, n, streams.stream(seed, streams.FAST, n, index)) for index in range(start, stop)]
    )


def terminal_values(values: Iterable[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(block)[:, -1] for block in values])
