import math
from typing import Dict, List, Optional, Set

import numpy as np

from wiplab.errors import ConfigError, LabError
from wiplab.maps import MapKind, MapModel, order_of
from wiplab.schemas import ExperimentConfig, ExperimentKind

# scale list each experiment walks
SCALE_KEYS: Dict[ExperimentKind, Optional[str]] = {
    ExperimentKind.CLT: "n",
    ExperimentKind.WIP_RATE: "n",
    ExperimentKind.DECOMP_CHECK: None,
    ExperimentKind.VNK_SCALING: "n",
    ExperimentKind.FASTSLOW_RATE: "eps",
    ExperimentKind.PROKHOROV_SELFTEST: None,
    ExperimentKind.RATE_TABLE: "gamma",
    ExperimentKind.COUPLING: "n",
    ExperimentKind.RETURN_TAIL: "n",
}

# experiments comparing against a rate bound that needs order p > 2
RATE_EXPERIMENTS: Set[ExperimentKind] = {
    ExperimentKind.WIP_RATE,
    ExperimentKind.FASTSLOW_RATE,
    ExperimentKind.COUPLING,
}

# experiments that take a moment order analysis.q
MOMENT_EXPERIMENTS: Set[ExperimentKind] = {
    ExperimentKind.VNK_SCALING,
    ExperimentKind.COUPLING,
    ExperimentKind.FASTSLOW_RATE,
}

ALLOWED_MAPS: Dict[ExperimentKind, Set[MapKind]] = {
    ExperimentKind.RETURN_TAIL: {MapKind.LSV},
}

# distance experiments need at least this many paths per side
MIN_ENSEMBLE = 2


def _map_violations(config: ExperimentConfig) -> List[str]:
    try:
        config.map.to_model()
    except LabError as exc:
        return [f"map: {exc.detail}"]
    return []


def validate(config: ExperimentConfig) -> List[str]:
    """Every admissibility problem with ``config``; an empty list means it can run."""
    violations = _map_violations(config)
    kind = config.experiment
    key = SCALE_KEYS[kind]
    if key is not None:
        values = getattr(config.scales, key)
        if not values:
            violations.append(f"scales.{key} must list at least one value for {kind.value}")
        elif any(b <= a for a, b in zip(values, values[1:])):
            violations.append(f"scales.{key} must be strictly increasing")
        if key == "n" and any(n < 1 for n in values):
            violations.append("scales.n must be positive")
        if key == "eps" and any(not 0.0 < e < 1.0 for e in values):
            violations.append("scales.eps must lie in (0, 1)")
        if key == "gamma" and any(not 0.0 < g < 0.5 for g in values):
            violations.append("scales.gamma must lie in (0, 1/2)")
    if config.ensemble.size < MIN_ENSEMBLE:
        violations.append(f"ensemble.size must be at least {MIN_ENSEMBLE}")
    if config.ensemble.projection_dim < 1:
        violations.append("ensemble.projection_dim must be at least 1")
    if config.ensemble.chunk < 1:
        violations.append("ensemble.chunk must be positive")
    if config.observable.kind == "power" and not (config.observable.theta and 0.0 < config.observable.theta <= 1.0):
        violations.append("observable.theta must lie in (0, 1] for a power observable")

    if violations and violations[0].startswith("map:"):
        return violations
    map_model = config.map.to_model()
    order = order_of(map_model)
    allowed = ALLOWED_MAPS.get(kind)
    if allowed is not None and map_model.kind not in allowed:
        violations.append(f"{kind.value} needs one of the maps {sorted(m.value for m in allowed)}")
    if kind in RATE_EXPERIMENTS and not order > 2.0:
        violations.append("order p must exceed 2")
    if map_model.kind is MapKind.LSV and map_model.gamma >= 0.5 and kind is not ExperimentKind.RETURN_TAIL:
        violations.append("LSV maps with gamma >= 1/2 lie outside the CLT regime")
    if kind in MOMENT_EXPERIMENTS:
        q = config.analysis.q
        if q < 2.0 or (math.isfinite(order) and q >= 2.0 * (order - 1.0)):
            violations.append(f"analysis.q={q:g} is not an admissible moment order for {map_model.label}")
    if kind is ExperimentKind.FASTSLOW_RATE:
        violations.extend(_fastslow_violations(config, map_model))
    if kind is ExperimentKind.PROKHOROV_SELFTEST:
        if not 2 <= config.selftest.max_atoms <= 8:
            violations.append("selftest.max_atoms must lie in [2, 8]")
        if not config.selftest.dims or any(d < 1 for d in config.selftest.dims):
            violations.append("selftest.dims must list positive dimensions")
    return violations


def _fastslow_violations(config: ExperimentConfig, map_model: MapModel) -> List[str]:
    settings = config.fastslow
    out: List[str] = []
    try:
        drift = settings.drift.to_drift(map_model)
        diffusion = settings.diffusion.to_diffusion()
    except LabError as exc:
        return [f"fastslow: {exc.detail}"]
    if diffusion.lower <= 0.0:
        out.append("fastslow.diffusion must stay bounded away from 0")
    if settings.x_bound <= 0.0:
        out.append("fastslow.x_bound must be positive")
    for eps in config.scales.eps:
        if 0.0 < eps < 1.0 and math.ceil(1.0 / (eps * eps) - 1e-9) > settings.max_steps:
            out.append(f"eps={eps:g} needs more than fastslow.max_steps={settings.max_steps} steps")
    w_sup = _observable_sup(drift.w) if drift.w is not None else 0.0
    sup, lipschitz, perturbation = drift.bounds(settings.x_bound, w_sup)
    declared = settings.declared
    checks = (
        ("drift_bound", declared.drift_bound, sup),
        ("lipschitz", declared.lipschitz, lipschitz),
        ("perturbation", declared.perturbation, perturbation),
    )
    for name, claimed, actual in checks:
        if claimed is not None and claimed < actual:
            out.append(f"fastslow.declared.{name}={claimed:g} is below the family's value {actual:g}")
    return out


def _observable_sup(spec) -> float:
    grid = np.linspace(0.0, 1.0, 4097)
    return float(np.max(np.abs(spec(grid))))


def require_valid(config: ExperimentConfig):
    violations = validate(config)
    if violations:
        raise ConfigError("; ".join(violations), violations=violations)
