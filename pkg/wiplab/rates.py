"""Theoretical convergence exponents and log-log rate fits.

Exponents are reported without the arbitrarily small delta losses of the
underlying bounds; constants are never estimated.
"""
import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from wiplab.errors import DroppedDataWarning, InsufficientData, NonPositive, RangeError, RateFormulaError

logger = logging.getLogger(__name__)

# crossing point of the two homogenization branches
P_STAR = (11.0 + math.sqrt(73.0)) / 4.0
GAMMA_STAR = (11.0 - math.sqrt(73.0)) / 12.0
WIP_SUP = 0.25
KUBILIUS_DELTAS = (1.0, 0.75)


@dataclass(frozen=True)
class RateFit:
    scales: np.ndarray
    distances: np.ndarray
    slope: float
    intercept: float
    r2: float

    @property
    def n_points(self) -> int:
        return int(self.scales.size)

    @property
    def rate(self) -> float:
        return -self.slope


@dataclass(frozen=True)
class LogRateFit:
    slope: float
    log_power: float
    intercept: float
    r2: float
    n_points: int


@dataclass(frozen=True)
class HomogRate:
    exponent: float
    log_power: float


@dataclass(frozen=True)
class LsvRates:
    gamma: float
    wip: float
    homog: float
    log_free: bool
    log_power: float


@dataclass(frozen=True)
class RateRow:
    param: float
    branch: str
    exponent: float
    logpower: float


def _check_order(p: float):
    if not p > 2.0:
        raise RangeError(f"order p must exceed 2, got {p}")


def r_wip(p: float) -> float:
    """WIP rate exponent (p - 2)/(4p); p = inf gives the supremum 1/4."""
    _check_order(p)
    if math.isinf(p):
        return WIP_SUP
    return (p - 2.0) / (4.0 * p)


def r1_wip(p: float) -> float:
    _check_order(p)
    if math.isinf(p):
        return 0.25
    if p <= 3.5:
        value = (p - 2.0) / (2.0 * p + 2.0)
    elif p < 4.0:
        value = (p - 2.0) / (4.0 * p - 5.0)
    else:
        value = (p - 2.0) / (4.0 * p - 6.0)
    if not value > r_wip(p):
        raise RateFormulaError(f"r1({p}) = {value} does not dominate r({p}) = {r_wip(p)}")
    return value


def r_homog(p: float) -> HomogRate:
    _check_order(p)
    if math.isinf(p):
        return HomogRate(1.0 / 3.0, math.inf)
    if p <= P_STAR:
        return HomogRate((p - 2.0) / (2.0 * p), 0.0)
    return HomogRate((2.0 * p - 2.0) / (3.0 * (2.0 * p - 1.0)), (p - 1.0) / 2.0)


def lsv_rates(gamma: float) -> LsvRates:
    """Exponents for the LSV family, where every order p < 1/gamma is available."""
    if not 0.0 < gamma < 0.5:
        raise RangeError(f"gamma must lie in (0, 1/2), got {gamma}")
    wip = (1.0 - 2.0 * gamma) / 4.0
    if gamma >= GAMMA_STAR:
        return LsvRates(gamma, wip, (1.0 - 2.0 * gamma) / 2.0, True, 0.0)
    p = 1.0 / gamma
    return LsvRates(gamma, wip, (2.0 - 2.0 * gamma) / (3.0 * (2.0 - gamma)), False, (p - 1.0) / 2.0)


def kubilius_delta(p: float) -> float:
    """Largest delta in [0, 3/4] or {1} with 2 + 2 delta <= p."""
    _check_order(p)
    for delta in KUBILIUS_DELTAS:
        if 2.0 + 2.0 * delta <= p:
            return delta
    return (p - 2.0) / 2.0


def lambda2_exponent(p: float) -> float:
    _check_order(p)
    return (p - 1.0) / (4.0 * p - 3.0) if math.isfinite(p) else 0.25


def coupling_exponent(p: float) -> float:
    """Exponent of the Lq distance between g(W_n) and sigma X_n."""
    _check_order(p)
    return (p - 2.0) / (4.0 * (p - 1.0)) if math.isfinite(p) else 0.25


def fastslow_rate(r: float, q: float) -> HomogRate:
    """Homogenization exponent from a WIP rate r and moment order q, with its log power."""
    if r <= 0.0 or q <= 0.0:
        raise RangeError(f"rate and moment order must be positive, got r={r}, q={q}")
    return HomogRate(min(r, q / (3.0 * (q + 1.0))), q / 4.0)


def _positive_pairs(scales: Sequence[float], distances: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(scales, dtype=float)
    y = np.asarray(distances, dtype=float)
    if x.shape != y.shape:
        raise InsufficientData(f"{x.size} scales for {y.size} distances")
    if np.any(y < 0.0):
        raise NonPositive("distances must be nonnegative")
    if np.any(x <= 0.0):
        raise NonPositive("scales must be positive")
    zero = y == 0.0
    if zero.any():
        warnings.warn(f"dropped {int(zero.sum())} zero distances from the fit", DroppedDataWarning, stacklevel=3)
        x, y = x[~zero], y[~zero]
    return x, y


def fit_rate(scales: Sequence[float], distances: Sequence[float]) -> RateFit:
    """OLS of log distance on log scale; decaying distances give a negative slope."""
    x, y = _positive_pairs(scales, distances)
    if x.size < 3:
        raise InsufficientData(f"a rate fit needs at least 3 positive pairs, got {x.size}")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(ly) == 0.0:
        return RateFit(x, y, 0.0, float(ly[0]), 1.0)
    fit = stats.linregress(lx, ly)
    return RateFit(x, y, float(fit.slope), float(fit.intercept), float(fit.rvalue**2))


def fit_rate_with_log(eps: Sequence[float], distances: Sequence[float]) -> LogRateFit:
    """Joint fit log d = a + s log eps + k log(-log eps); needs six scales below 1."""
    x, y = _positive_pairs(eps, distances)
    if x.size < 6:
        raise InsufficientData(f"a log-corrected fit needs at least 6 positive pairs, got {x.size}")
    if np.any(x >= 1.0):
        raise RangeError("log-corrected fits take scales eps < 1")
    design = np.column_stack([np.ones_like(x), np.log(x), np.log(-np.log(x))])
    ly = np.log(y)
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ coef
    total = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / total if total > 0 else 1.0
    return LogRateFit(float(coef[1]), float(coef[2]), float(coef[0]), r2, int(x.size))


def rate_table(gammas: Iterable[float], include_wip: bool = False) -> List[RateRow]:
    """One homogenization row per gamma, optionally preceded by its WIP row."""
    rows: List[RateRow] = []
    for gamma in gammas:
        rates = lsv_rates(gamma)
        if include_wip:
            rows.append(RateRow(gamma, "wip", rates.wip, 0.0))
        branch = "homog-logfree" if rates.log_free else "homog-log"
        rows.append(RateRow(gamma, branch, rates.homog, rates.log_power))
    return rows


def write_rate_table(rows: Iterable[RateRow], path: str):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["param", "branch", "exponent", "logpower"])
        for row in rows:
            writer.writerow([f"{row.param:.17g}", row.branch, f"{row.exponent:.17g}", f"{row.logpower:.17g}"])


def predicted_exponent(order: float, homogenization: bool = False) -> Optional[float]:
    """Exponent the bounds predict for a map of the given order, None when p <= 2."""
    if not order > 2.0:
        return None
    return r_homog(order).exponent if homogenization else r_wip(order)
