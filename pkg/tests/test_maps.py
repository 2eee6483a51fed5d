import math

import numpy as np
import pytest
from scipy import stats

from wiplab import runner
from wiplab.errors import CapExceeded, RangeError, ResourceLimitError
from wiplab.maps import (
    MapKind,
    MapModel,
    grid_image,
    inducing_diagnostics,
    invariant_cdf,
    invariant_quantile,
    iter_orbit,
    orbit,
    orbit_block,
    order_of,
    return_time,
    return_time_tail,
    sample_invariant_batch,
    step,
)


def test_map_model_validation():
    with pytest.raises(RangeError):
        MapModel.lsv(1.0)
    with pytest.raises(RangeError):
        MapModel(MapKind.LSV)
    with pytest.raises(RangeError):
        MapModel(MapKind.DOUBLING, 0.3)
    assert MapModel("lsv", 0.25).label == "lsv(gamma=0.25)"
    assert MapModel.lsv(0.6).gamma == 0.6


def test_step_values(doubling, gauss, lsv):
    assert step(doubling, 0.75) == 0.5
    assert step(gauss, 0.0) == 0.0
    assert step(gauss, 0.3) == pytest.approx(1.0 / 0.3 - 3.0)
    assert step(lsv, 0.25) == pytest.approx(0.25 * (1.0 + 0.5**0.25))
    assert step(lsv, 0.75) == 0.5


@pytest.mark.parametrize("name", ["doubling", "gauss", "lsv"])
def test_scalar_and_vector_steps_agree(name, request):
    map = request.getfixturevalue(name)
    x = np.array([0.0, 0.1, 0.2, 0.37, 0.5, 0.81, 0.999])
    expected = np.array([step(map, float(xi)) for xi in x])
    assert np.allclose(step(map, x), expected, rtol=1e-14, atol=0.0)


def test_grid_image_is_left_continuous_at_one(doubling):
    nodes = np.array([0.0, 0.5, 1.0])
    assert grid_image(doubling, nodes).tolist() == [0.0, 0.0, 1.0]


def test_doubling_orbit_collapses_without_refresh(doubling):
    values = orbit(doubling, 0.1, 60).values
    assert values[0] == 0.1
    assert values[-1] == 0.0


def test_refreshed_orbit_stays_alive_and_is_reproducible(doubling):
    a = orbit(doubling, 0.1, 500, rng=np.random.default_rng(3)).values
    b = orbit(doubling, 0.1, 500, rng=np.random.default_rng(3)).values
    assert np.array_equal(a, b)
    assert np.count_nonzero(a[100:]) >= 390


def test_iter_orbit_matches_orbit(doubling):
    whole = orbit(doubling, 0.3, 1000, rng=np.random.default_rng(11)).values
    pieces = list(iter_orbit(doubling, 0.3, 1000, rng=np.random.default_rng(11), chunk=128))
    assert max(p.size for p in pieces) == 128
    assert np.array_equal(np.concatenate(pieces), whole)


def test_orbit_limits(lsv):
    with pytest.raises(RangeError):
        orbit(lsv, 0.3, 0)
    with pytest.raises(ResourceLimitError):
        orbit(lsv, 0.3, 100, max_length=10)


def test_orbit_block_rows_follow_the_map(lsv):
    starts = np.array([0.1, 0.4, 0.9])
    block = orbit_block(lsv, starts, 5)
    for row, x0 in zip(block, starts):
        assert np.array_equal(row, orbit(lsv, x0, 5).values)


def test_gauss_quantile_inverts_cdf(gauss):
    u = np.linspace(0.0, 1.0, 11)
    assert np.allclose(invariant_cdf(gauss, invariant_quantile(gauss, u)), u, atol=1e-14)
    with pytest.raises(RangeError):
        invariant_quantile(MapModel.lsv(0.25), 0.5)


def test_gauss_invariant_samples(gauss, rng):
    x = sample_invariant_batch(gauss, rng, 20_000)
    assert x.min() > 0.0
    assert stats.kstest(x, lambda t: invariant_cdf(gauss, t)).pvalue > 1e-3


def test_return_time(lsv):
    assert return_time(lsv, 0.75).tau == 1
    sample = return_time(lsv, 0.6, record=True)
    assert sample.tau == 3
    assert sample.itinerary[0] == 0.6
    assert sample.itinerary[-1] >= 0.5
    with pytest.raises(CapExceeded):
        return_time(lsv, 0.5, cap=100)
    with pytest.raises(RangeError):
        return_time(lsv, 0.2)
    with pytest.raises(RangeError):
        return_time(MapModel.doubling(), 0.7)


def test_order_of(doubling, lsv):
    assert math.isinf(order_of(doubling))
    assert order_of(lsv) == 4.0


@pytest.mark.parametrize("gamma", [0.25, 0.5])
def test_return_time_tail_slope(gamma, rng):
    grid = [10, 20, 50, 100, 200, 500, 1000]
    estimate = return_time_tail(MapModel.lsv(gamma), grid, 400_000, rng, fit_range=runner.TAIL_FIT_RANGE)
    assert np.all(np.diff(estimate.tail) <= 0)
    assert estimate.expected_slope == pytest.approx(-1.0 / gamma)
    assert estimate.slope == pytest.approx(-1.0 / gamma, rel=0.1)


def test_inducing_diagnostics(lsv, rng):
    diag = inducing_diagnostics(lsv, 200, rng)
    assert diag.pairs > 100
    assert diag.expansion_min >= 1.0
    assert diag.tau_max >= 1
    assert np.isfinite(diag.distortion_max)
