"""Named Hölder observables and integrals against the invariant measures."""
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate

from wiplab.errors import QuadratureFailure, RangeError
from wiplab.maps import MapKind, MapModel

KINDS = ("zero", "cos", "x", "power", "poly")

QUAD_TOL = 1e-12


@dataclass(frozen=True)
class ObservableSpec:
    kind: str = "x"
    theta: Optional[float] = None
    coeffs: Tuple[float, ...] = ()
    mean: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RangeError(f"unknown observable {self.kind!r}; expected one of {KINDS}")
        if self.kind == "power" and (self.theta is None or not 0.0 < self.theta <= 1.0):
            raise RangeError(f"power observable needs theta in (0, 1], got {self.theta}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def eta(self) -> float:
        """Hölder exponent."""
        return float(self.theta) if self.kind == "power" else 1.0

    @property
    def label(self) -> str:
        if self.kind == "power":
            return f"x^{self.theta:g}"
        if self.kind == "poly":
            return "poly(" + ",".join(f"{c:g}" for c in self.coeffs) + ")"
        return {"zero": "0", "cos": "cos(2pi x)", "x": "x"}[self.kind]

    def base(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "cos":
            return np.cos(2.0 * math.pi * x)
        if self.kind == "x":
            return x.copy()
        if self.kind == "power":
            return np.power(x, self.theta)
        return np.polynomial.polynomial.polyval(x, self.coeffs) if self.coeffs else np.zeros_like(x)

    def __call__(self, x):
        """Centered evaluation."""
        return self.base(x) - self.mean


def integrate_invariant(map: MapModel, f: Callable[[np.ndarray], np.ndarray], ulam=None) -> float:
    """Integral of ``f`` against the invariant measure of ``map``.

    Doubling and Gauss use adaptive quadrature on the exact density; LSV
    integrates cell averages against an Ulam stationary vector.
    """
    if map.kind is MapKind.DOUBLING:
        return _quad(lambda x: float(f(np.asarray(x))))
    if map.kind is MapKind.GAUSS:
        log2 = math.log(2.0)
        return _quad(lambda x: float(f(np.asarray(x))) / ((1.0 + x) * log2))
    if ulam is None:
        from wiplab.transfer import ulam_model

        ulam = ulam_model(map)
    return ulam.integrate(f)


def _quad(integrand) -> float:
    value, error = integrate.quad(integrand, 0.0, 1.0, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    if error > 1e-9:
        raise QuadratureFailure(f"invariant-measure quadrature error {error:.2e} above 1e-9")
    return float(value)


def center(v: ObservableSpec, map: MapModel, ulam=None) -> ObservableSpec:
    """Return ``v`` with its centering constant set to its invariant mean."""
    if v.kind == "zero":
        return replace(v, mean=0.0)
    mean = integrate_invariant(map, v.base, ulam=ulam)
    return replace(v, mean=mean)


def second_moment(v: ObservableSpec, map: MapModel, ulam=None) -> float:
    if v.kind == "zero":
        return 0.0
    return integrate_invariant(map, lambda x: v(x) ** 2, ulam=ulam)
