"""Fast-slow systems driven by a map and their homogenized SDE limits.

The slow variable follows
    x(k+1) = x(k) + eps^2 a_eps(x(k), y(k)) + eps b(x(k)) v(y(k)),  y(k) = T^k y0,
and x_eps(t) = x(t eps^-2), linearly interpolated, converges to the SDE with
Ito drift abar + b b' Sigma and noise b dW, W of variance sigma^2.
"""
import functools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from wiplab import rng as streams
from wiplab.distances import DistanceReport, empirical_prokhorov
from wiplab.errors import BudgetExceeded, QuadratureFailure, RangeError
from wiplab.maps import DEFAULT_BURN_IN, MapModel, orbit, path_orbit
from wiplab.observables import ObservableSpec, second_moment
from wiplab.paths import SamplePath, dyadic_times, noise_increments, offset_block, projected_ensemble, uniform_grid
from wiplab.transfer import check_admissible, orbit_blocks

logger = logging.getLogger(__name__)

DEFAULT_STEP_BUDGET = 2**22
DEFAULT_X_BOUND = 10.0
PSI_NODES = 1025
PSI_TOL = 1e-10
MEAN_FORMS = ("zero", "linear", "tanh", "sin", "constant")
COUPLING_FORMS = ("zero", "constant", "cos")
PERTURBATION_FORMS = ("zero", "sin")
DIFFUSION_FORMS = ("one", "constant", "sine", "rational")


@dataclass(frozen=True)
class Drift:
    """a_eps(x, y) = abar(x) + c(x) w(y) + eps^(1/3) e(x, y), with w centered."""

    mean: str = "zero"
    kappa: float = 1.0
    coupling: str = "zero"
    c0: float = 1.0
    w: Optional[ObservableSpec] = None
    perturbation: str = "zero"
    e0: float = 1.0

    def __post_init__(self):
        if self.mean not in MEAN_FORMS:
            raise RangeError(f"unknown drift mean {self.mean!r}; expected one of {MEAN_FORMS}")
        if self.coupling not in COUPLING_FORMS:
            raise RangeError(f"unknown drift coupling {self.coupling!r}; expected one of {COUPLING_FORMS}")
        if self.perturbation not in PERTURBATION_FORMS:
            raise RangeError(f"unknown drift perturbation {self.perturbation!r}")
        if self.coupling != "zero" and self.w is None:
            raise RangeError("a coupled drift needs an observable w")

    def abar(self, x):
        x = np.asarray(x, dtype=float)
        if self.mean == "zero":
            return np.zeros_like(x)
        if self.mean == "linear":
            return -self.kappa * x
        if self.mean == "tanh":
            return -self.kappa * np.tanh(x)
        if self.mean == "sin":
            return self.kappa * np.sin(x)
        return np.full_like(x, self.kappa)

    def c(self, x):
        x = np.asarray(x, dtype=float)
        if self.coupling == "zero":
            return np.zeros_like(x)
        if self.coupling == "constant":
            return np.full_like(x, self.c0)
        return self.c0 * np.cos(x)

    def e(self, x, y):
        if self.perturbation == "zero":
            return np.zeros(np.broadcast(x, y).shape)
        return self.e0 * np.sin(np.asarray(x) + 2.0 * math.pi * np.asarray(y))

    def __call__(self, x, y, eps: float = 0.0):
        value = self.abar(x)
        if self.coupling != "zero":
            value = value + self.c(x) * self.w(y)
        if self.perturbation != "zero" and eps > 0.0:
            value = value + eps ** (1.0 / 3.0) * self.e(x, y)
        return value

    def bounds(self, x_bound: float, w_sup: float = 0.0) -> Tuple[float, float, float]:
        """(sup |a_eps|, Lipschitz constant of a_0 in x, C with |a_eps - a_0| <= C eps^(1/3)) on |x| <= x_bound."""
        mean_sup = {
            "zero": 0.0,
            "linear": abs(self.kappa) * x_bound,
            "tanh": abs(self.kappa) * math.tanh(x_bound),
            "sin": abs(self.kappa),
            "constant": abs(self.kappa),
        }[self.mean]
        mean_lip = 0.0 if self.mean in ("zero", "constant") else abs(self.kappa)
        c_sup = 0.0 if self.coupling == "zero" else abs(self.c0)
        c_lip = abs(self.c0) if self.coupling == "cos" else 0.0
        e_sup = 0.0 if self.perturbation == "zero" else abs(self.e0)
        return mean_sup + c_sup * w_sup + e_sup, mean_lip + c_lip * w_sup, e_sup


@dataclass(frozen=True)
class Diffusion:
    kind: str = "one"
    beta0: float = 1.0
    beta1: float = 0.0

    def __post_init__(self):
        if self.kind not in DIFFUSION_FORMS:
            raise RangeError(f"unknown diffusion {self.kind!r}; expected one of {DIFFUSION_FORMS}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "one":
            return np.ones_like(x)
        if self.kind == "constant":
            return np.full_like(x, self.beta0)
        if self.kind == "sine":
            return self.beta0 + self.beta1 * np.sin(x)
        return (1.0 + x * x) / (1.0 + 2.0 * x * x)

    def prime(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind in ("one", "constant"):
            return np.zeros_like(x)
        if self.kind == "sine":
            return self.beta1 * np.cos(x)
        return -2.0 * x / (1.0 + 2.0 * x * x) ** 2

    def second(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind in ("one", "constant"):
            return np.zeros_like(x)
        if self.kind == "sine":
            return -self.beta1 * np.sin(x)
        return (12.0 * x * x - 2.0) / (1.0 + 2.0 * x * x) ** 3

    @property
    def lower(self) -> float:
        """inf b over the real line."""
        if self.kind == "one":
            return 1.0
        if self.kind == "constant":
            return self.beta0
        if self.kind == "sine":
            return self.beta0 - abs(self.beta1)
        return 0.5

    @property
    def upper(self) -> float:
        if self.kind == "one":
            return 1.0
        if self.kind == "constant":
            return self.beta0
        if self.kind == "sine":
            return self.beta0 + abs(self.beta1)
        return 1.0


def _steps_for(dt: float) -> int:
    """ceil(1/dt), ignoring rounding noise in 1/dt."""
    n = 1.0 / dt
    nearest = round(n)
    return int(nearest) if abs(n - nearest) <= 1e-9 * n else int(math.ceil(n))


@dataclass(frozen=True)
class FastSlowConfig:
    eps: float
    map: MapModel
    v: ObservableSpec
    xi: float = 0.0
    drift: Drift = field(default_factory=Drift)
    diffusion: Diffusion = field(default_factory=Diffusion)
    x_bound: float = DEFAULT_X_BOUND
    max_steps: int = DEFAULT_STEP_BUDGET

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise RangeError(f"eps must lie in (0, 1), got {self.eps}")

    @property
    def steps(self) -> int:
        """N = ceil(eps^-2)."""
        return _steps_for(self.eps * self.eps)

    @property
    def uniform(self) -> bool:
        return self.steps * self.eps * self.eps == 1.0

    def nodes(self) -> np.ndarray:
        """Times t = k eps^2, k = 0..N, of the fast-slow iterates."""
        N = self.steps
        return uniform_grid(N) if self.uniform else np.arange(N + 1) * (self.eps * self.eps)

    def with_eps(self, eps: float) -> "FastSlowConfig":
        return replace(self, eps=eps)


@dataclass(frozen=True)
class SdeSolution:
    path: SamplePath
    dt: float
    scheme: str = "euler-maruyama-ito"
    seed: Optional[int] = None


@dataclass(frozen=True)
class PsiTransform:
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    forward: CubicHermiteSpline = field(repr=False)
    backward: CubicHermiteSpline = field(repr=False)
    diffusion: Diffusion
    drift: Drift
    v2: float

    def psi(self, x):
        return self.forward(np.asarray(x, dtype=float))

    def inverse(self, z):
        z = np.asarray(z, dtype=float)
        x = self.backward(z)
        # one Newton step against the forward table, psi' = 1/b
        return x - (self.forward(x) - z) * self.diffusion(x)

    def abar_z(self, z):
        """Drift of Z = psi(X): abar/b - b' v2 / 2 at x = psi^-1(z)."""
        x = self.inverse(z)
        return self.drift.abar(x) / self.diffusion(x) - 0.5 * self.diffusion.prime(x) * self.v2


@dataclass(frozen=True)
class MomentConditions:
    n: np.ndarray
    drift: np.ndarray
    observable: np.ndarray
    square: np.ndarray
    q: float


@dataclass(frozen=True)
class HomogenizationReport:
    eps: float
    steps: int
    distance: DistanceReport
    psi_distance: DistanceReport
    floor: Optional[DistanceReport] = None


def ito_drift(x, cfg: FastSlowConfig, sigma2: float, Sigma: float):
    b = cfg.diffusion
    return cfg.drift.abar(x) + b(x) * b.prime(x) * Sigma


def stratonovich_drift(x, cfg: FastSlowConfig, v2: float):
    """Drift of the Stratonovich form; adding b b' sigma^2 / 2 gives the Ito drift."""
    b = cfg.diffusion
    return cfg.drift.abar(x) - 0.5 * b(x) * b.prime(x) * v2


def _check_budget(cfg: FastSlowConfig, steps: int):
    if steps > cfg.max_steps:
        raise BudgetExceeded(f"{steps} steps exceed the budget of {cfg.max_steps}", steps=steps, budget=cfg.max_steps)


def _recursion(cfg: FastSlowConfig, ys: np.ndarray) -> np.ndarray:
    """Slow iterates for a (rows, N) array of fast orbits."""
    eps = cfg.eps
    eps2 = eps * eps
    rows, N = ys.shape
    vv = cfg.v(ys)
    out = np.empty((rows, N + 1))
    x = np.full(rows, float(cfg.xi))
    out[:, 0] = x
    for k in range(N):
        y = ys[:, k]
        x = x + eps2 * cfg.drift(x, y, eps) + eps * cfg.diffusion(x) * vv[:, k]
        out[:, k + 1] = x
    return out


def _restricted(cfg: FastSlowConfig, values: np.ndarray) -> SamplePath:
    if cfg.uniform:
        return SamplePath(values)
    nodes = cfg.nodes()
    inside = nodes < 1.0
    times = np.concatenate([nodes[inside], [1.0]])
    return SamplePath(np.concatenate([values[inside], [np.interp(1.0, nodes, values)]]), times)


def simulate_fastslow(cfg: FastSlowConfig, y0: float, rng: Optional[np.random.Generator] = None) -> SamplePath:
    """x_eps on [0, 1] from the fast start y0.

    ``rng`` only feeds the low-bit refresh of doubling orbits.
    """
    N = cfg.steps
    _check_budget(cfg, N)
    ys = orbit(cfg.map, y0, N, rng=rng if cfg.map.refreshes else None).values
    return _restricted(cfg, _recursion(cfg, ys[None, :])[0])


def _euler(cfg: FastSlowConfig, x0: np.ndarray, dt: float, z: np.ndarray, sigma2: float, drift: Callable, unit: bool = False) -> np.ndarray:
    rows, steps = z.shape
    out = np.empty((rows, steps + 1))
    x = x0.astype(float)
    out[:, 0] = x
    for k in range(steps):
        dw = noise_increments(sigma2, dt, z[:, k])
        noise = dw if unit else cfg.diffusion(x) * dw
        x = x + drift(x) * dt + noise
        out[:, k + 1] = x
    return out


def solve_limit_sde(cfg: FastSlowConfig, sigma2: float, Sigma: float, dt: float, rng: np.random.Generator, seed: Optional[int] = None) -> SdeSolution:
    """Euler–Maruyama on the Ito form over [0, 1]."""
    if not 0.0 < dt <= 1e-2:
        raise RangeError(f"time step must lie in (0, 0.01], got {dt}")
    if sigma2 < 0.0:
        raise RangeError(f"variance must be nonnegative, got {sigma2}")
    steps = _steps_for(dt)
    _check_budget(cfg, steps)
    z = rng.standard_normal((1, steps))
    values = _euler(cfg, np.array([cfg.xi]), dt, z, sigma2, partial(ito_drift, cfg=cfg, sigma2=sigma2, Sigma=Sigma))[0]
    nodes = np.arange(steps + 1) * dt
    if steps * dt == 1.0:
        return SdeSolution(SamplePath(values), dt, seed=seed)
    inside = nodes < 1.0
    times = np.concatenate([nodes[inside], [1.0]])
    path = SamplePath(np.concatenate([values[inside], [np.interp(1.0, nodes, values)]]), times)
    return SdeSolution(path, dt, seed=seed)


@functools.lru_cache(maxsize=16)
def psi_transform(cfg: FastSlowConfig, v2: float = 0.0) -> PsiTransform:
    """psi(x) = int_0^x dt/b(t) tabulated on [-x_bound, x_bound] with its inverse and the Z drift."""
    b = cfg.diffusion
    if b.lower <= 0.0:
        raise RangeError(f"diffusion must stay positive, inf b = {b.lower}")
    grid = np.linspace(-cfg.x_bound, cfg.x_bound, PSI_NODES)
    pieces = np.empty(grid.size - 1)
    for i, (lo, hi) in enumerate(zip(grid[:-1], grid[1:])):
        value, error = integrate.quad(lambda t: 1.0 / float(b(t)), lo, hi, epsabs=PSI_TOL, epsrel=PSI_TOL)
        if error > PSI_TOL:
            raise QuadratureFailure(f"psi quadrature error {error:.2e} on [{lo:.4g}, {hi:.4g}]")
        pieces[i] = value
    values = np.concatenate([[0.0], np.cumsum(pieces)])
    values -= np.interp(0.0, grid, values)
    slopes = 1.0 / b(grid)
    forward = CubicHermiteSpline(grid, values, slopes)
    backward = CubicHermiteSpline(values, grid, 1.0 / slopes)
    return PsiTransform(grid, values, forward, backward, b, cfg.drift, float(v2))


def drift_solution_map(u: SamplePath, cfg: FastSlowConfig) -> SamplePath:
    """G(u): the solution of z(t) = xi + int_0^t abar(z) ds + u(t) on u's grid."""
    nodes = u.nodes
    values = np.empty(u.values.size)
    values[0] = cfg.xi + u.values[0]
    for k in range(u.values.size - 1):
        dt = nodes[k + 1] - nodes[k]
        values[k + 1] = values[k] + float(cfg.drift.abar(values[k])) * dt + (u.values[k + 1] - u.values[k])
    return SamplePath(values, u.times)


def check_moment_conditions(
    cfg: FastSlowConfig,
    q: float,
    n_grid: Sequence[int],
    samples: int,
    rng: np.random.Generator,
    u_grid: Optional[Sequence[float]] = None,
) -> MomentConditions:
    """|sums of a_0(u, .) - abar(u)|_q, |v_n|_q and |sums of v^2 - int v^2|_q, each over n^(1/2)."""
    check_admissible(cfg.map, q)
    u = np.linspace(-1.0, 1.0, 5) if u_grid is None else np.asarray(u_grid, dtype=float)
    v2 = second_moment(cfg.v, cfg.map)
    ns = np.asarray(n_grid, dtype=np.int64)
    drift = np.zeros(ns.size)
    obs = np.zeros(ns.size)
    square = np.zeros(ns.size)
    for i, n in enumerate(ns):
        acc_drift = np.zeros(u.size)
        acc_obs = acc_square = 0.0
        for ys in orbit_blocks(cfg.map, int(n), samples, rng):
            vv = cfg.v(ys)
            acc_obs += float(np.sum(np.abs(vv.sum(axis=1)) ** q))
            acc_square += float(np.sum(np.abs((vv * vv - v2).sum(axis=1)) ** q))
            for j, uj in enumerate(u):
                fluctuation = cfg.drift(np.full_like(ys, uj), ys) - cfg.drift.abar(uj)
                acc_drift[j] += float(np.sum(np.abs(fluctuation.sum(axis=1)) ** q))
        scale = math.sqrt(n)
        drift[i] = float(np.max((acc_drift / samples) ** (1.0 / q))) / scale
        obs[i] = (acc_obs / samples) ** (1.0 / q) / scale
        square[i] = (acc_square / samples) ** (1.0 / q) / scale
    return MomentConditions(ns, drift, obs, square, float(q))


def fastslow_block(cfg: FastSlowConfig, seed: int, start: int, stop: int, burn_in: int = DEFAULT_BURN_IN) -> np.ndarray:
    """Slow-variable node values for path indices start..stop-1.

    Fast orbits come from the same streams as the W_n ensembles at n = N.
    """
    N = cfg.steps
    ys = np.empty((stop - start, N))
    for row, index in enumerate(range(start, stop)):
        ys[row] = path_orbit(cfg.map, N, streams.stream(seed, streams.FAST, N, index), burn_in=burn_in)
    return _recursion(cfg, ys)


def _noise(seed: int, N: int, start: int, stop: int) -> np.ndarray:
    return np.vstack([streams.stream(seed, streams.NOISE, N, index).standard_normal(N) for index in range(start, stop)])


def sde_block(cfg: FastSlowConfig, sigma2: float, Sigma: float, seed: int, start: int, stop: int) -> np.ndarray:
    """Limit SDE paths on the fast-slow grid (dt = eps^2), one noise stream per index."""
    N = cfg.steps
    z = _noise(seed, N, start, stop)
    drift = partial(ito_drift, cfg=cfg, sigma2=sigma2, Sigma=Sigma)
    return _euler(cfg, np.full(stop - start, float(cfg.xi)), cfg.eps * cfg.eps, z, sigma2, drift)


def psi_fastslow_block(cfg: FastSlowConfig, v2: float, seed: int, start: int, stop: int) -> np.ndarray:
    return psi_transform(cfg, v2).psi(fastslow_block(cfg, seed, start, stop))


def z_block(cfg: FastSlowConfig, sigma2: float, v2: float, seed: int, start: int, stop: int) -> np.ndarray:
    """dZ = Abar(Z) dt + dW from Z(0) = psi(xi), sharing the SDE noise streams."""
    transform = psi_transform(cfg, v2)
    N = cfg.steps
    z = _noise(seed, N, start, stop)
    z0 = np.full(stop - start, float(transform.psi(cfg.xi)))
    return _euler(cfg, z0, cfg.eps * cfg.eps, z, sigma2, transform.abar_z, unit=True)


def homogenization_experiment(
    cfg: FastSlowConfig,
    sigma2: float,
    Sigma: float,
    M: int,
    seed: int,
    v2: Optional[float] = None,
    times: Optional[Sequence[float]] = None,
    mapper: Callable = map,
    floor: bool = False,
) -> HomogenizationReport:
    """Prokhorov distance between M fast-slow paths and M SDE paths at the projection times.

    Also reports the distance between psi(x_eps) and the unit-diffusion Z ensemble,
    and with ``floor`` the distance between two independent SDE ensembles.
    """
    N = cfg.steps
    _check_budget(cfg, N)
    times = dyadic_times() if times is None else np.asarray(times, dtype=float)
    if v2 is None:
        v2 = sigma2 - 2.0 * Sigma
    nodes = cfg.nodes()
    slow = projected_ensemble(partial(fastslow_block, cfg, seed), nodes, times, M, mapper)
    sde = partial(sde_block, cfg, sigma2, Sigma, seed)
    limit = projected_ensemble(sde, nodes, times, M, mapper)
    distance = empirical_prokhorov(slow, limit)
    psi_slow = projected_ensemble(partial(psi_fastslow_block, cfg, v2, seed), nodes, times, M, mapper)
    psi_limit = projected_ensemble(partial(z_block, cfg, sigma2, v2, seed), nodes, times, M, mapper)
    psi_distance = empirical_prokhorov(psi_slow, psi_limit)
    logger.info("homogenization at eps=%g (N=%d): distance %.4g, psi distance %.4g", cfg.eps, N, distance.value, psi_distance.value)
    control = None
    if floor:
        control = empirical_prokhorov(limit, projected_ensemble(partial(offset_block, sde, M), nodes, times, M, mapper))
    return HomogenizationReport(cfg.eps, N, distance, psi_distance, control)
