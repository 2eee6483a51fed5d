"""Interval maps, orbits, invariant sampling and the LSV inducing scheme."""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from scipy import stats

from wiplab import kernels
from wiplab.errors import CapExceeded, RangeError, ResourceLimitError
from wiplab.rng import BitSource

logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 1000
DEFAULT_RETURN_CAP = 10**8
DEFAULT_SEGMENT = 2**12
DEFAULT_MAX_ORBIT = 2**26
GAUSS_FLOOR = 1e-15

RETURN_SET = (0.5, 1.0)


class MapKind(str, Enum):
    DOUBLING = "doubling"
    GAUSS = "gauss"
    LSV = "lsv"


KIND_CODES = {MapKind.DOUBLING: kernels.DOUBLING, MapKind.GAUSS: kernels.GAUSS, MapKind.LSV: kernels.LSV}


@dataclass(frozen=True)
class MapModel:
    kind: MapKind
    gamma: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", MapKind(self.kind))
        if self.kind is MapKind.LSV:
            if self.gamma is None or not 0.0 < self.gamma < 1.0:
                raise RangeError(f"LSV map needs gamma in (0, 1), got {self.gamma}")
            if self.gamma >= 0.5:
                logger.warning("LSV map with gamma=%s lies outside the CLT regime gamma < 1/2", self.gamma)
        elif self.gamma is not None:
            raise RangeError(f"{self.kind.value} map takes no gamma")
        if not self.label:
            label = self.kind.value if self.gamma is None else f"lsv(gamma={self.gamma:g})"
            object.__setattr__(self, "label", label)

    @classmethod
    def doubling(cls) -> "MapModel":
        return cls(MapKind.DOUBLING)

    @classmethod
    def gauss(cls) -> "MapModel":
        return cls(MapKind.GAUSS)

    @classmethod
    def lsv(cls, gamma: float) -> "MapModel":
        return cls(MapKind.LSV, gamma)

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def exponent(self) -> float:
        # kernels ignore gamma for the other maps
        return 0.0 if self.gamma is None else float(self.gamma)

    @property
    def refreshes(self) -> bool:
        """Whether ensemble orbits get a fresh low bit after every step."""
        return self.kind is MapKind.DOUBLING


@dataclass(frozen=True)
class OrbitBuffer:
    x0: float
    values: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ReturnTimeSample:
    start: float
    tau: int
    itinerary_recorded: bool = False
    itinerary: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class ReturnTailEstimate:
    n: np.ndarray
    tail: np.ndarray
    slope: float
    intercept: float
    r2: float
    expected_slope: float
    samples: int


@dataclass(frozen=True)
class InducingDiagnostics:
    pairs: int
    expansion_min: float
    distortion_max: float
    tau_max: int


def step(map: MapModel, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    if np.ndim(x) == 0:
        return float(kernels.step(map.code, map.exponent, float(x)))
    x = np.asarray(x, dtype=float)
    if map.kind is MapKind.DOUBLING:
        y = 2.0 * x
        return y - np.floor(y)
    if map.kind is MapKind.GAUSS:
        safe = np.where(x > 0.0, x, 1.0)
        y = 1.0 / safe
        return np.where(x > 0.0, y - np.floor(y), 0.0)
    left = x * (1.0 + (2.0 * np.minimum(x, 0.5)) ** map.gamma)
    return np.where(x < 0.5, left, 2.0 * x - 1.0)


def grid_image(map: MapModel, nodes: np.ndarray) -> np.ndarray:
    """T on grid nodes, with the doubling map taken left-continuous at x = 1."""
    image = step(map, nodes)
    if map.kind is MapKind.DOUBLING:
        image = np.where(nodes >= 1.0, 1.0, image)
    return image


def orbit(
    map: MapModel,
    x0: float,
    n: int,
    rng: Optional[np.random.Generator] = None,
    max_length: int = DEFAULT_MAX_ORBIT,
) -> OrbitBuffer:
    """First ``n`` iterates of ``x0``, starting with ``x0`` itself.

    Without ``rng`` the doubling map runs on bare floating point and collapses
    to 0 within 53 steps. With ``rng`` each doubling step gets a fresh random
    bit at 2**-53; use ``iter_orbit`` for orbits longer than ``max_length``.
    """
    if n < 1:
        raise RangeError(f"orbit length must be positive, got {n}")
    if n > max_length:
        raise ResourceLimitError(f"orbit of length {n} exceeds the budget of {max_length}; stream it instead")
    bits = _bits(map, BitSource(rng) if rng is not None else None, n - 1)
    values = np.empty(n)
    values[0] = x0
    kernels.advance(map.code, map.exponent, float(x0), bits, values[1:])
    return OrbitBuffer(float(x0), values)


def iter_orbit(
    map: MapModel,
    x0: float,
    n: int,
    rng: Optional[np.random.Generator] = None,
    chunk: int = DEFAULT_SEGMENT,
) -> Iterator[np.ndarray]:
    """Stream the same values as ``orbit`` in chunks of at most ``chunk``."""
    if n < 1:
        raise RangeError(f"orbit length must be positive, got {n}")
    source = BitSource(rng) if rng is not None else None
    x = float(x0)
    emitted = 0
    while emitted < n:
        size = min(chunk, n - emitted)
        out = np.empty(size)
        if emitted == 0:
            out[0] = x
            x = kernels.advance(map.code, map.exponent, x, _bits(map, source, size - 1), out[1:])
        else:
            x = kernels.advance(map.code, map.exponent, x, _bits(map, source, size), out)
        emitted += size
        yield out


def orbit_block(
    map: MapModel, starts: np.ndarray, n: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Orbits of length ``n`` from each start, one row per start.

    Refresh bits for all rows come from the single ``rng`` in row order.
    """
    starts = np.ascontiguousarray(starts, dtype=float)
    if rng is not None and map.refreshes and n > 1:
        bits = BitSource(rng).take(starts.size * (n - 1)).reshape(starts.size, n - 1)
    else:
        bits = np.empty((starts.size, 0), dtype=np.uint8)
    return kernels.orbit_block(map.code, map.exponent, starts, bits, n)


def path_orbit(map: MapModel, n: int, rng: np.random.Generator, burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    """An invariant start followed by n - 1 iterates, all drawn from one path stream."""
    y0 = sample_invariant(map, rng, burn_in=burn_in)
    return orbit(map, y0, n, rng=rng if map.refreshes else None).values


def _bits(map: MapModel, source: Optional[BitSource], k: int) -> np.ndarray:
    if source is None or not map.refreshes or k <= 0:
        return np.empty(0, dtype=np.uint8)
    return source.take(k)


def invariant_quantile(map: MapModel, u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Inverse CDF of the invariant measure (doubling and Gauss only)."""
    if map.kind is MapKind.DOUBLING:
        return u
    if map.kind is MapKind.GAUSS:
        return np.exp2(u) - 1.0
    raise RangeError("the LSV invariant measure has no closed-form quantile")


def invariant_cdf(map: MapModel, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    if map.kind is MapKind.DOUBLING:
        return np.clip(x, 0.0, 1.0)
    if map.kind is MapKind.GAUSS:
        return np.log1p(np.clip(x, 0.0, 1.0)) / math.log(2.0)
    raise RangeError("the LSV invariant measure has no closed-form CDF")


def sample_invariant(map: MapModel, rng: np.random.Generator, burn_in: int = DEFAULT_BURN_IN) -> float:
    return float(sample_invariant_batch(map, rng, 1, burn_in=burn_in)[0])


def sample_invariant_batch(
    map: MapModel, rng: np.random.Generator, size: int, burn_in: int = DEFAULT_BURN_IN
) -> np.ndarray:
    """Draw ``size`` points from the invariant measure.

    Exact for doubling and Gauss. For LSV a uniform start is pushed through
    ``burn_in`` iterates, which is only approximately invariant.
    """
    u = rng.random(size)
    if map.kind is MapKind.DOUBLING:
        return u
    if map.kind is MapKind.GAUSS:
        x = invariant_quantile(map, u)
        low = x < GAUSS_FLOOR
        while low.any():
            x[low] = invariant_quantile(map, rng.random(int(low.sum())))
            low = x < GAUSS_FLOOR
        return x
    zero = u == 0.0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    if burn_in <= 0:
        return u
    warm = kernels.orbit_block(map.code, map.exponent, u, np.empty((size, 0), dtype=np.uint8), burn_in + 1)
    return warm[:, -1].copy()


def return_time(map: MapModel, y: float, cap: int = DEFAULT_RETURN_CAP, record: bool = False) -> ReturnTimeSample:
    """First return of ``y`` in [1/2, 1] to [1/2, 1] under the LSV map."""
    if map.kind is not MapKind.LSV:
        raise RangeError("return times are defined for the LSV inducing scheme only")
    if not RETURN_SET[0] <= y <= RETURN_SET[1]:
        raise RangeError(f"start point {y} is outside [1/2, 1]")
    if cap < 1:
        raise RangeError(f"cap must be positive, got {cap}")
    escape = int(kernels.escape_time(map.gamma, 2.0 * y - 1.0, cap - 1))
    if escape < 0:
        raise CapExceeded(cap, start=y)
    itinerary = None
    if record:
        itinerary = orbit(map, y, escape + 2, max_length=max(DEFAULT_MAX_ORBIT, escape + 2)).values
    return ReturnTimeSample(float(y), escape + 1, record, itinerary)


def order_of(map: MapModel) -> float:
    """Supremum of the orders p for which the map is nonuniformly expanding (not attained for LSV)."""
    if map.kind is MapKind.LSV:
        return 1.0 / map.gamma
    return math.inf


def return_time_tail(
    map: MapModel,
    n_grid: Sequence[int],
    samples: int,
    rng: np.random.Generator,
    fit_range: Sequence[int] = (10, 1000),
) -> ReturnTailEstimate:
    """Importance-sampled P(tau > n) for Lebesgue-distributed y in [1/2, 1].

    T(y) = 2y - 1 is uniform on [0, 1] and tau(y) = 1 + escape(T y), with the
    escape time decreasing in its argument. Starts are drawn log-uniformly on
    [x_min, 1] and reweighted; x_min sits well below the escape threshold of
    the largest n, so all mass under it counts as tau > n.
    """
    if map.kind is not MapKind.LSV:
        raise RangeError("return-time tails are defined for the LSV inducing scheme only")
    n = np.asarray(sorted(n_grid), dtype=np.int64)
    if n.size == 0 or n[0] < 1:
        raise RangeError("n grid must be nonempty and positive")
    gamma = map.gamma
    scale = gamma * 2.0**gamma * 20.0 * float(n[-1])
    x_min = scale ** (-1.0 / gamma)
    span = -math.log(x_min)
    x = np.exp(-span * rng.random(samples))
    escape = kernels.escape_times(gamma, x, 200 * int(n[-1]))
    weight = x * span
    tau = np.where(escape < 0, np.iinfo(np.int64).max, escape + 1)
    tail = np.array([x_min + float(np.mean(weight * (tau > k))) for k in n])
    logger.info("return-time tail for gamma=%s from %d samples, x_min=%.3g", gamma, samples, x_min)
    keep = (n >= fit_range[0]) & (n <= fit_range[1]) & (tail > 0)
    if keep.sum() >= 2:
        fit = stats.linregress(np.log(n[keep]), np.log(tail[keep]))
        slope, intercept, r2 = float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    else:
        slope = intercept = r2 = float("nan")
    return ReturnTailEstimate(n, tail, slope, intercept, r2, -1.0 / gamma, samples)


def inducing_diagnostics(
    map: MapModel,
    samples: int,
    rng: np.random.Generator,
    separation: float = 1e-9,
    cap: int = 10**6,
) -> InducingDiagnostics:
    """Empirical expansion and bounded-distortion constants of the induced map.

    Nearby pairs y, y' in [1/2, 1] sharing a return time are iterated to their
    first return F; reports min d(Fy, Fy')/d(y, y') and
    max_{l < tau} d(T^l y, T^l y')/d(Fy, Fy').
    """
    if map.kind is not MapKind.LSV:
        raise RangeError("inducing diagnostics apply to the LSV map only")
    ys = 0.5 + separation + (0.5 - 2.0 * separation) * rng.random(samples)
    expansion = math.inf
    distortion = 0.0
    tau_max = 0
    pairs = 0
    for y in ys:
        y2 = y + separation
        tau1, tau2, f1, f2, widest = kernels.induced_pair(map.gamma, y, y2, cap)
        if tau1 == 0 or tau1 != tau2 or f1 == f2:
            continue
        gap = abs(f1 - f2)
        expansion = min(expansion, gap / abs(y2 - y))
        distortion = max(distortion, widest / gap)
        tau_max = max(tau_max, int(tau1))
        pairs += 1
    return InducingDiagnostics(pairs, float(expansion), float(distortion), tau_max)
