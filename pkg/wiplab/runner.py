"""Experiment pipelines, the worker pool and the CSV writer.

Every pipeline returns its tables; ``run`` writes them in a fixed order with
17 significant digits, so identical configs give identical bytes whatever
the worker count.
"""
import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from functools import cached_property, partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from wiplab import __version__, models, rates
from wiplab import rng as streams
from wiplab.distances import (
    brute_force_prokhorov,
    empirical_prokhorov,
    kolmogorov_distance,
    kubilius_diagnostics,
    lq_sup_distance,
    prokhorov_bound_from_moment,
)
from wiplab.errors import InsufficientData
from wiplab.fastslow import FastSlowConfig, homogenization_experiment
from wiplab.maps import MapKind, MapModel, inducing_diagnostics, order_of, path_orbit, return_time_tail
from wiplab.observables import ObservableSpec, second_moment
from wiplab.paths import (
    brownian_block,
    chunk_bounds,
    coupling_block,
    dyadic_times,
    offset_block,
    projected_ensemble,
    uniform_grid,
    wn_block,
)
from wiplab.schemas import ExperimentConfig, ExperimentKind, RunManifest
from wiplab.transfer import (
    GordinDecomposition,
    batch_sigma2,
    gordin_decompose,
    green_kubo_sigma2,
    moment_scaling_check,
    vnk_from_orbit,
    vnk_scaling,
)
from wiplab.validation import require_valid

logger = logging.getLogger(__name__)

DISTANCES = "distances.csv"
FITS = "fits.csv"
RATES = "rates.csv"

HEADERS: Dict[str, Tuple[str, ...]] = {
    DISTANCES: ("experiment", "scale", "estimator", "value", "aux1", "aux2", "aux3"),
    FITS: ("experiment", "slope", "intercept", "r2", "n_points"),
    RATES: ("param", "branch", "exponent", "logpower"),
}

MANIFEST = "manifest.json"
OUT_DIR_ENV = "WIPLAB_OUT_DIR"

SELFTEST_GRID = 4
KUBILIUS_EPS = np.geomspace(1e-3, 1.0, 31)
TAIL_FIT_RANGE = (10, 1000)
FLOOR_ESTIMATOR = "prokhorov-floor"
FLOOR_MARGIN = 1.1

Tables = Dict[str, List[Sequence[Any]]]


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> int:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(cell) for cell in row])
    return len(rows)


def _call_block(block: Callable[[int, int], Any], bounds: Tuple[int, int]):
    return block(*bounds)


def gather(block: Callable[[int, int], Any], count: int, chunk: int, mapper: Callable = map) -> List[Any]:
    """``block(start, stop)`` over consecutive index ranges, results in index order."""
    return list(mapper(partial(_call_block, block), chunk_bounds(count, chunk)))


@dataclass(frozen=True)
class LimitConstants:
    sigma2: float
    Sigma: float
    v2: float


def limit_constants(map: MapModel, v: ObservableSpec, config: ExperimentConfig) -> LimitConstants:
    """sigma^2, the correlation sum Sigma and int v^2 for the limiting SDE.

    Doubling uses the Green–Kubo quadrature; other maps take sigma^2 from the
    martingale part and recover Sigma = (sigma^2 - int v^2)/2.
    """
    transfer = config.transfer
    if map.kind is MapKind.DOUBLING:
        gk = green_kubo_sigma2(map, v, transfer.correlation_terms, size=transfer.grid)
        return LimitConstants(gk.sigma2, gk.correlation_sum, gk.variance)
    dec = gordin_decompose(map, v, K=transfer.terms, size=transfer.grid)
    v2 = second_moment(v, map)
    return LimitConstants(dec.sigma2_m, 0.5 * (dec.sigma2_m - v2), v2)


@dataclass
class Context:
    config: ExperimentConfig
    mapper: Callable = map

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def kind(self) -> str:
        return self.config.experiment.value

    @cached_property
    def map(self) -> MapModel:
        return self.config.map.to_model()

    @cached_property
    def observable(self) -> ObservableSpec:
        return self.config.observable.to_spec(self.map)

    @cached_property
    def constants(self) -> LimitConstants:
        return limit_constants(self.map, self.observable, self.config)

    @cached_property
    def decomposition(self) -> GordinDecomposition:
        transfer = self.config.transfer
        return gordin_decompose(self.map, self.observable, K=transfer.terms, size=transfer.grid)

    def analysis_stream(self, scale: int = 0, index: int = 0) -> np.random.Generator:
        return streams.stream(self.seed, streams.ANALYSIS, scale, index)


def _fit_row(
    kind: str, scales: Sequence[float], values: Sequence[float], predicted: Optional[float] = None
) -> List[Sequence[Any]]:
    if len(scales) < 3:
        return []
    try:
        fit = rates.fit_rate(scales, values)
    except InsufficientData as exc:
        logger.warning("%s: no rate fit (%s)", kind, exc.detail)
        return []
    logger.info("%s: fitted slope %.4g (r2 %.3g, %d points)", kind, fit.slope, fit.r2, fit.n_points)
    if predicted is not None:
        logger.info("%s: the bounds predict slope %.4g", kind, predicted)
    return [(kind, fit.slope, fit.intercept, fit.r2, fit.n_points)]


def predicted_slope(map: MapModel, homogenization: bool = False) -> Optional[float]:
    """Log-log slope the rate bounds predict: distances fall in n and grow in eps."""
    exponent = rates.predicted_exponent(order_of(map), homogenization)
    if exponent is None:
        return None
    return exponent if homogenization else -exponent


def trend_warnings(
    kind: str, slope: Optional[float], values: Sequence[float], floors: Sequence[float], sign: float = -1.0
) -> List[str]:
    """Warn when a rate run shows no convergence trend or stays at the sampling floor.

    ``sign`` is the sign the fitted slope must have; ``floors`` are same-law
    distances at the same ensemble size.
    """
    messages = []
    if slope is not None and not sign * slope > 0.0:
        messages.append(f"{kind}: fitted slope {slope:.4g} shows no convergence trend")
    if floors and values and max(values) <= FLOOR_MARGIN * max(floors):
        messages.append(
            f"{kind}: every distance is within {FLOOR_MARGIN:g}x the same-law floor {max(floors):.4g}; "
            "the ensemble is too small to resolve the rate"
        )
    for message in messages:
        logger.warning(message)
    return messages


def _slope(fits: List[Sequence[Any]]) -> Optional[float]:
    return float(fits[0][1]) if fits else None


def run_clt(ctx: Context) -> Tables:
    """Kolmogorov distance between W_n(1) and Normal(0, sigma^2)."""
    config = ctx.config
    M = config.ensemble.size
    sigma = math.sqrt(ctx.constants.sigma2)
    reference = stats.norm(loc=0.0, scale=sigma).cdf
    rows = []
    for n in config.scales.n:
        block = partial(wn_block, ctx.map, ctx.observable, n, ctx.seed)
        terminal = projected_ensemble(block, uniform_grid(n), [1.0], M, ctx.mapper, config.ensemble.chunk)[:, 0]
        value = kolmogorov_distance(terminal, reference)
        logger.info("clt at n=%d: Kolmogorov distance %.4g over %d paths", n, value, M)
        rows.append((ctx.kind, n, "kolmogorov", value, M, ctx.constants.sigma2, None))
    return {DISTANCES: rows}


def run_wip_rate(ctx: Context) -> Tables:
    """Empirical Prokhorov distance between projected W_n and Brownian ensembles, per n."""
    config = ctx.config
    M, chunk = config.ensemble.size, config.ensemble.chunk
    times = dyadic_times(config.ensemble.projection_dim)
    sigma2 = ctx.constants.sigma2
    rows, values, floors = [], [], []
    for n in config.scales.n:
        nodes = uniform_grid(n)
        P = projected_ensemble(partial(wn_block, ctx.map, ctx.observable, n, ctx.seed), nodes, times, M, ctx.mapper, chunk)
        brownian = partial(brownian_block, sigma2, n, ctx.seed)
        Q = projected_ensemble(brownian, nodes, times, M, ctx.mapper, chunk)
        report = empirical_prokhorov(P, Q)
        # paths M..2M-1 share no stream with Q
        control = projected_ensemble(partial(offset_block, brownian, M), nodes, times, M, ctx.mapper, chunk)
        floor = empirical_prokhorov(Q, control)
        logger.info("wip-rate at n=%d: Prokhorov distance %.4g, same-law floor %.4g", n, report.value, floor.value)
        rows.append((ctx.kind, n, report.estimator, report.value, *report.aux))
        rows.append((ctx.kind, n, FLOOR_ESTIMATOR, floor.value, *floor.aux))
        values.append(report.value)
        floors.append(floor.value)
    fits = _fit_row(ctx.kind, config.scales.n, values, predicted_slope(ctx.map))
    trend_warnings(ctx.kind, _slope(fits), values, floors)
    return {DISTANCES: rows, FITS: fits}


def fastslow_config(config: ExperimentConfig, map: MapModel, v: ObservableSpec, eps: float) -> FastSlowConfig:
    settings = config.fastslow
    return FastSlowConfig(
        eps=eps,
        map=map,
        v=v,
        xi=settings.xi,
        drift=settings.drift.to_drift(map),
        diffusion=settings.diffusion.to_diffusion(),
        x_bound=settings.x_bound,
        max_steps=settings.max_steps,
    )


def run_fastslow_rate(ctx: Context) -> Tables:
    """Prokhorov distance between fast-slow and limit SDE ensembles, per eps."""
    config = ctx.config
    constants = ctx.constants
    times = dyadic_times(config.ensemble.projection_dim)
    rows, values, floors = [], [], []
    eps_grid = config.scales.eps
    for eps in eps_grid:
        cfg = fastslow_config(config, ctx.map, ctx.observable, eps)
        report = homogenization_experiment(
            cfg, constants.sigma2, constants.Sigma, config.ensemble.size, ctx.seed,
            v2=constants.v2, times=times, mapper=ctx.mapper, floor=True,
        )
        rows.append((ctx.kind, eps, report.distance.estimator, report.distance.value, *report.distance.aux))
        rows.append((ctx.kind, eps, "prokhorov-psi", report.psi_distance.value, *report.psi_distance.aux))
        values.append(report.distance.value)
        rows.append((ctx.kind, eps, FLOOR_ESTIMATOR, report.floor.value, *report.floor.aux))
        floors.append(report.floor.value)
    fits = _fit_row(ctx.kind, eps_grid, values, predicted_slope(ctx.map, homogenization=True))
    trend_warnings(ctx.kind, _slope(fits), values, floors, sign=1.0)
    if len(eps_grid) >= 6:
        try:
            fit = rates.fit_rate_with_log(eps_grid, values)
            fits.append((f"{ctx.kind}-log", fit.slope, fit.intercept, fit.r2, fit.n_points))
            logger.info("fastslow-rate: log-corrected slope %.4g, log power %.4g", fit.slope, fit.log_power)
        except InsufficientData as exc:
            logger.warning("fastslow-rate: no log-corrected fit (%s)", exc.detail)
    return {DISTANCES: rows, FITS: fits}


def run_decomp_check(ctx: Context) -> Tables:
    """Residuals of the martingale-coboundary split and three estimates of sigma^2."""
    config = ctx.config
    transfer = config.transfer
    dec = ctx.decomposition
    gk = green_kubo_sigma2(
        ctx.map, ctx.observable, transfer.correlation_terms, samples=transfer.samples,
        rng=ctx.analysis_stream(0, 0), size=transfer.grid,
    )
    batch = batch_sigma2(ctx.map, ctx.observable, transfer.batch_length, transfer.samples, ctx.analysis_stream(0, 1))
    logger.info(
        "decomp-check on %s: K=%d, sigma2_m %.10g, Green–Kubo %.10g, batch %.6g",
        ctx.map.label, dec.K, dec.sigma2_m, gk.sigma2, batch.value,
    )
    rows = [
        (ctx.kind, dec.K, "coboundary-residual", dec.coboundary_residual, None, None, None),
        (ctx.kind, dec.K, "martingale-residual", dec.martingale_residual, None, None, None),
        (ctx.kind, dec.K, "sigma2-m", dec.sigma2_m, dec.contraction, dec.tail_estimate, None),
        (ctx.kind, transfer.correlation_terms, "green-kubo", gk.sigma2, gk.variance, gk.correlation_sum, gk.stderr),
        (ctx.kind, transfer.batch_length, "batch", batch.value, batch.samples, None, batch.stderr),
    ]
    return {DISTANCES: rows}


def run_vnk_scaling(ctx: Context) -> Tables:
    """Concentration of V_{n,k} around k/n, and the maximal moment ratio, across n."""
    config = ctx.config
    scaling = vnk_scaling(ctx.map, ctx.decomposition, config.scales.n, config.analysis.starts, ctx.analysis_stream(0, 0))
    rows = [(ctx.kind, int(n), "vnk-rms", rms, config.analysis.starts, None, None) for n, rms in zip(scaling.n, scaling.rms)]
    q = config.analysis.q
    moments = moment_scaling_check(ctx.map, ctx.observable, q, config.scales.n, config.ensemble.size, ctx.analysis_stream(0, 1))
    rows.extend((ctx.kind, int(n), "moment-ratio", ratio, q, config.ensemble.size, None) for n, ratio in zip(moments.n, moments.ratio))
    fits = []
    if scaling.fit is not None:
        fits.append((ctx.kind, scaling.fit.slope, scaling.fit.intercept, scaling.fit.r2, scaling.fit.n_points))
    return {DISTANCES: rows, FITS: fits}


def selftest_block(seed: int, max_atoms: int, dims: Tuple[int, ...], start: int, stop: int) -> List[Tuple]:
    """Random instances start..stop-1 on a coarse lattice, solved by matching and by brute force."""
    out = []
    for index in range(start, stop):
        rng = streams.stream(seed, streams.SELFTEST, 0, index)
        m = int(rng.integers(2, max_atoms + 1))
        d = int(dims[int(rng.integers(len(dims)))])
        P = rng.integers(0, SELFTEST_GRID + 1, size=(m, d)) / SELFTEST_GRID
        Q = rng.integers(0, SELFTEST_GRID + 1, size=(m, d)) / SELFTEST_GRID
        out.append((index, m, d, empirical_prokhorov(P, Q).value, brute_force_prokhorov(P, Q).value))
    return out


def run_prokhorov_selftest(ctx: Context) -> Tables:
    """Matching solver against the permutation oracle, plus a hand-computed case."""
    settings = ctx.config.selftest
    block = partial(selftest_block, ctx.seed, settings.max_atoms, tuple(settings.dims))
    results = [item for part in gather(block, settings.instances, ctx.config.ensemble.chunk, ctx.mapper) for item in part]
    rows = []
    passed = 0
    for index, m, d, fast, oracle in results:
        ok = fast == oracle
        passed += ok
        rows.append((ctx.kind, index, "matching", fast, oracle, m, d))
    hand = empirical_prokhorov(np.array([[0.0], [1.0]]), np.array([[0.05], [2.0]])).value
    passed += hand == 0.5
    rows.append((ctx.kind, "hand", "matching", hand, 0.5, 2, 1))
    total = len(results) + 1
    rows.append((ctx.kind, "summary", "passed", passed, total - passed, total, None))
    if passed == total:
        logger.info("prokhorov-selftest: %d of %d instances agree", passed, total)
    else:
        logger.warning("prokhorov-selftest: %d of %d instances disagree with the oracle", total - passed, total)
    return {DISTANCES: rows}


def run_rate_table(ctx: Context) -> Tables:
    config = ctx.config
    rows = rates.rate_table(config.scales.gamma, include_wip=config.analysis.include_wip)
    return {RATES: [(row.param, row.branch, row.exponent, row.logpower) for row in rows]}


def kubilius_block(dec: GordinDecomposition, n: int, seed: int, start: int, stop: int) -> Tuple[np.ndarray, np.ndarray]:
    """m-values and V_{n,n} along orbits start..stop-1 of the analysis streams."""
    marray = np.empty((stop - start, n))
    vnn = np.empty(stop - start)
    for row, index in enumerate(range(start, stop)):
        values = path_orbit(dec.map, n + 1, streams.stream(seed, streams.ANALYSIS, n, index))
        marray[row] = dec.m_at(values[:n])
        vnn[row] = vnk_from_orbit(dec, values)[-1]
    return marray, vnn


def run_coupling(ctx: Context) -> Tables:
    """Lq size of the time-reversal coupling gap and the Prokhorov bound it implies."""
    config = ctx.config
    dec = ctx.decomposition
    q = config.analysis.q
    M, chunk = config.ensemble.size, config.ensemble.chunk
    delta = rates.kubilius_delta(order_of(ctx.map))
    sigma = math.sqrt(dec.sigma2_m)
    rows, values = [], []
    for n in config.scales.n:
        gaps = np.concatenate(gather(partial(coupling_block, dec, n, ctx.seed), M, chunk, ctx.mapper))
        eps0 = lq_sup_distance(gaps, np.zeros_like(gaps), q)
        rows.append((ctx.kind, n, "lq-gap", eps0, q, M, None))
        rows.append((ctx.kind, n, "prokhorov-bound", prokhorov_bound_from_moment(eps0, q), q, None, None))
        parts = gather(partial(kubilius_block, dec, n, ctx.seed), config.analysis.kubilius_paths, chunk, ctx.mapper)
        marray = np.vstack([m for m, _ in parts])
        vnn = np.concatenate([v for _, v in parts])
        report = kubilius_diagnostics(marray, sigma, n, delta, KUBILIUS_EPS, vnn)
        rows.append((ctx.kind, n, "kubilius", report.bound, report.lambda1, report.lambda2, delta))
        logger.info("coupling at n=%d: Lq gap %.4g, Kubilius bound %.4g", n, eps0, report.bound)
        values.append(eps0)
    return {DISTANCES: rows, FITS: _fit_row(ctx.kind, config.scales.n, values)}


def run_return_tail(ctx: Context) -> Tables:
    """Return-time tail of the LSV inducing scheme and its fitted slope."""
    config = ctx.config
    estimate = return_time_tail(
        ctx.map, config.scales.n, config.analysis.tail_samples,
        streams.stream(ctx.seed, streams.TAIL, 0, 0), fit_range=TAIL_FIT_RANGE,
    )
    rows = [(ctx.kind, int(n), "tail", tail, estimate.samples, None, None) for n, tail in zip(estimate.n, estimate.tail)]
    diag = inducing_diagnostics(ctx.map, config.analysis.inducing_pairs, streams.stream(ctx.seed, streams.TAIL, 0, 1))
    rows.append((ctx.kind, "inducing", "expansion-min", diag.expansion_min, diag.distortion_max, diag.tau_max, diag.pairs))
    fits = []
    lo, hi = TAIL_FIT_RANGE
    used = int(np.sum((estimate.n >= lo) & (estimate.n <= hi) & (estimate.tail > 0)))
    if used >= 2:
        fits.append((ctx.kind, estimate.slope, estimate.intercept, estimate.r2, used))
        logger.info("return-tail: slope %.4g against %.4g", estimate.slope, estimate.expected_slope)
    return {DISTANCES: rows, FITS: fits}


PIPELINES: Dict[ExperimentKind, Callable[[Context], Tables]] = {
    ExperimentKind.CLT: run_clt,
    ExperimentKind.WIP_RATE: run_wip_rate,
    ExperimentKind.DECOMP_CHECK: run_decomp_check,
    ExperimentKind.VNK_SCALING: run_vnk_scaling,
    ExperimentKind.FASTSLOW_RATE: run_fastslow_rate,
    ExperimentKind.PROKHOROV_SELFTEST: run_prokhorov_selftest,
    ExperimentKind.RATE_TABLE: run_rate_table,
    ExperimentKind.COUPLING: run_coupling,
    ExperimentKind.RETURN_TAIL: run_return_tail,
}


def output_dir(config: ExperimentConfig, out_dir: Optional[str] = None) -> Path:
    """--out, then WIPLAB_OUT_DIR, then the config's output path."""
    return Path(out_dir or os.environ.get(OUT_DIR_ENV) or config.output)


def write_tables(tables: Tables, out: Path) -> Tuple[Dict[str, int], str]:
    counts: Dict[str, int] = {}
    digest = hashlib.sha256()
    for name in sorted(tables):
        path = out / name
        counts[name] = write_csv(path, HEADERS[name], tables[name])
        digest.update(path.read_bytes())
    return counts, digest.hexdigest()


def run(config: ExperimentConfig, workers: int = 1, out_dir: Optional[str] = None) -> RunManifest:
    require_valid(config)
    out = output_dir(config, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    logger.info("running %s with seed %d on %d worker(s) into %s", config.experiment.value, config.seed, workers, out)
    pipeline = PIPELINES[config.experiment]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            tables = pipeline(Context(config, pool.map))
    else:
        tables = pipeline(Context(config))
    counts, digest = write_tables(tables, out)
    manifest = RunManifest(
        experiment=config.experiment.value,
        seed=config.seed,
        config=config.model_dump(mode="json"),
        version=__version__,
        started_at=started,
        wall_clock=time.perf_counter() - clock,
        rows=counts,
        digest=digest,
        output=str(out),
    )
    (out / MANIFEST).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info("%s finished in %.2fs: %s", config.experiment.value, manifest.wall_clock, counts)
    return manifest


def record_run(session, manifest: RunManifest):
    """Insert one ledger row for a finished run."""
    record = models.RunRecord(
        experiment=manifest.experiment,
        seed=str(manifest.seed),
        config=json.dumps(manifest.config, sort_keys=True),
        version=manifest.version,
        wall_clock=manifest.wall_clock,
        rows=json.dumps(manifest.rows, sort_keys=True),
        output=manifest.output,
        digest=manifest.digest,
    )
    session.add(record)
    session.commit()
    session.refresh(record)
    return record
