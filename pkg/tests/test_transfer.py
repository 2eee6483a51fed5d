import csv

import numpy as np
import pytest

from wiplab.errors import (
    AdmissibilityError,
    DegenerateVarianceError,
    DegenerateVarianceWarning,
    GridMismatch,
    NonConvergent,
    RangeError,
)
from wiplab.maps import MapModel, orbit
from wiplab.observables import ObservableSpec, center
from wiplab.transfer import (
    GridFunction,
    apply_transfer,
    batch_sigma2,
    check_admissible,
    correlation_sum,
    duality_gap,
    gordin_decompose,
    green_kubo_sigma2,
    lsv_edges,
    moment_scaling_check,
    to_csv,
    transfer_operator,
    ulam_model,
    vnk_from_orbit,
    vnk_profile,
    vnk_scaling,
)


@pytest.fixture
def v_doubling(doubling):
    return center(ObservableSpec("x"), doubling)


def test_grid_function_shapes():
    with pytest.raises(GridMismatch):
        GridFunction(np.zeros(3), np.zeros(4))
    f = GridFunction.uniform([0.0, 1.0, 0.0])
    assert f.size == 3
    assert f(0.25) == pytest.approx(0.5)
    assert f.sup() == 1.0


def test_doubling_operator_is_exact_on_affine_functions(doubling):
    op = transfer_operator(doubling, 256)
    x = op.nodes
    assert np.allclose(op.apply_values(x), x / 2.0 + 0.25, atol=1e-14)
    assert np.allclose(op.apply_values(np.ones_like(x)), 1.0, atol=1e-14)


def test_apply_transfer_rejects_foreign_grids(doubling):
    nodes = np.linspace(0.0, 1.0, 5) ** 2
    with pytest.raises(GridMismatch):
        apply_transfer(doubling, GridFunction(nodes, nodes))


def test_gauss_operator_preserves_constants_and_measure(gauss):
    op = transfer_operator(gauss, 1024)
    assert np.allclose(op.apply_values(np.ones(op.nodes.size)), 1.0, atol=1e-12)
    f = op.nodes**2
    assert op.integrate(op.apply_values(f)) == pytest.approx(op.integrate(f), abs=1e-9)


def test_gauss_duality(gauss, rng):
    op = transfer_operator(gauss, 1024)
    f = op.sample(lambda x: x * x)
    gap, stderr = duality_gap(gauss, f, lambda x: np.cos(3.0 * x), 50_000, rng)
    assert abs(gap) < 4.0 * stderr + 1e-4


def test_lsv_ulam_model(lsv):
    edges = lsv_edges(0.25, 64)
    assert edges[0] == 0.0 and edges[-1] == 1.0
    assert np.all(np.diff(edges) > 0)
    model = ulam_model(lsv)
    assert np.allclose(np.asarray(model.matrix.sum(axis=1)).ravel(), 1.0)
    assert model.stationary.sum() == pytest.approx(1.0)
    assert model.density[0] > model.density[-1]
    with pytest.raises(RangeError):
        ulam_model(MapModel.doubling())


def test_gordin_decomposition_doubling(doubling, v_doubling):
    dec = gordin_decompose(doubling, v_doubling, K=60)
    assert dec.coboundary_residual <= 1e-8
    assert dec.martingale_residual <= 1e-6
    assert dec.sigma2_m == pytest.approx(0.25, abs=1e-6)
    x = np.array([0.1, 0.3, 0.7])
    assert np.allclose(dec.v_at(x), x - 0.5, atol=1e-9)
    # m = 2v - v o T is +-1/2, so L(m^2) is flat
    assert np.allclose(dec.conditional_square(np.linspace(0.0, 1.0, 11)), 0.25, atol=1e-6)


def test_gordin_decomposition_lsv(lsv):
    dec = gordin_decompose(lsv, center(ObservableSpec("x"), lsv))
    assert dec.K <= 200
    assert dec.martingale_residual < 1e-3
    assert dec.sigma2_m > 0.0


def test_gordin_truncation_errors(doubling, v_doubling):
    with pytest.raises(RangeError):
        gordin_decompose(doubling, v_doubling, K=0)
    with pytest.raises(NonConvergent):
        gordin_decompose(doubling, v_doubling, K=1, tol=0.0)


def test_green_kubo_quadrature(doubling, v_doubling):
    gk = green_kubo_sigma2(doubling, v_doubling, 40)
    assert gk.method == "quadrature"
    assert gk.sigma2 == pytest.approx(0.25, abs=1e-6)
    assert gk.variance == pytest.approx(1.0 / 12.0, abs=1e-6)
    total, _ = correlation_sum(doubling, v_doubling, 10)
    assert total == pytest.approx((1.0 - 2.0**-10) / 12.0, abs=1e-6)


def test_green_kubo_monte_carlo_needs_rng(gauss):
    with pytest.raises(RangeError):
        green_kubo_sigma2(gauss, center(ObservableSpec("x"), gauss), 5)


def test_green_kubo_warns_on_zero_observable(doubling):
    with pytest.warns(DegenerateVarianceWarning):
        green_kubo_sigma2(doubling, ObservableSpec("zero"), 5)


def test_batch_estimator_agrees(doubling, v_doubling, rng):
    estimate = batch_sigma2(doubling, v_doubling, 1024, 4000, rng)
    assert estimate.samples == 4000
    assert abs(estimate.value - 0.25) <= 3.0 * estimate.stderr


def test_vnk_profile(doubling, v_doubling, rng):
    dec = gordin_decompose(doubling, v_doubling)
    V = vnk_profile(doubling, dec, 0.3, 1024, rng=rng)
    assert V.size == 1025
    assert V[0] == 0.0
    assert V[-1] == pytest.approx(1.0, abs=0.25)
    values = orbit(doubling, 0.3, 17, rng=np.random.default_rng(5)).values
    forward = vnk_from_orbit(dec, values)
    backward = vnk_from_orbit(dec, values, reverse=True)
    assert forward[-1] == pytest.approx(backward[-1], abs=1e-12)


def test_vnk_needs_martingale_variance(doubling):
    dec = gordin_decompose(doubling, ObservableSpec("zero"))
    with pytest.raises(DegenerateVarianceError):
        vnk_from_orbit(dec, np.linspace(0.1, 0.9, 9))


def test_vnk_scaling_slope(doubling, rng):
    v = center(ObservableSpec("cos"), doubling)
    dec = gordin_decompose(doubling, v)
    scaling = vnk_scaling(doubling, dec, [256, 512, 1024, 2048, 4096], 64, rng)
    assert scaling.fit is not None
    assert -0.7 <= scaling.fit.slope <= -0.3


def test_admissible_moment_orders(lsv):
    check_admissible(lsv, 2.0)
    check_admissible(lsv, 5.9)
    with pytest.raises(AdmissibilityError):
        check_admissible(lsv, 6.0)
    with pytest.raises(AdmissibilityError):
        check_admissible(lsv, 1.5)


def test_moment_scaling_check(doubling, v_doubling, rng):
    table = moment_scaling_check(doubling, v_doubling, 4.0, [64, 256], 500, rng)
    assert table.ratio.shape == (2,)
    assert np.all(table.ratio > 0.0)
    assert np.all(table.ratio < 3.0)


def test_to_csv(doubling, v_doubling, tmp_path):
    op = transfer_operator(doubling, 8)
    target = tmp_path / "v.csv"
    to_csv(op.sample(v_doubling), str(target))
    with open(target) as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["node", "value"]
    assert len(rows) == 10
    assert float(rows[1][1]) == pytest.approx(-0.5)


def test_doubling_transfer_of_known_functions(doubling):
    nodes = np.linspace(0.0, 1.0, 4097)
    wave = apply_transfer(doubling, GridFunction(nodes, np.cos(2.0 * np.pi * nodes)))
    assert np.allclose(wave.values, 0.0, atol=1e-10)
    ramp = apply_transfer(doubling, GridFunction(nodes, nodes - 0.5))
    assert np.allclose(ramp.values, (nodes - 0.5) / 2.0, atol=1e-14)


def test_lsv_transfer_fixes_constants(lsv):
    op = transfer_operator(lsv)
    image = apply_transfer(lsv, op.grid(np.ones(op.nodes.size)))
    assert np.allclose(image.values, 1.0, atol=1e-3)


def test_gordin_cos_is_its_own_martingale(doubling):
    dec = gordin_decompose(doubling, ObservableSpec("cos"), K=1)
    assert np.allclose(dec.chi.values, 0.0, atol=1e-10)
    assert np.allclose(dec.m.values, dec.v.values, atol=1e-10)
    assert dec.sigma2_m == pytest.approx(0.5, abs=1e-8)


def test_gordin_zero_observable(doubling):
    dec = gordin_decompose(doubling, ObservableSpec("zero"))
    assert np.all(dec.chi.values == 0.0)
    assert np.all(dec.m.values == 0.0)
    assert dec.sigma2_m == 0.0


def test_gordin_gauss_martingale_identity(gauss):
    dec = gordin_decompose(gauss, center(ObservableSpec("x"), gauss), K=60)
    assert dec.martingale_residual <= 1e-6
    assert dec.coboundary_residual <= 1e-8


def test_green_kubo_cos_has_no_correlations(doubling):
    gk = green_kubo_sigma2(doubling, ObservableSpec("cos"), 10)
    assert gk.sigma2 == pytest.approx(0.5, abs=1e-8)
    assert np.allclose(gk.terms[1:], 0.0, atol=1e-10)


def test_batch_estimator_cos(doubling, rng):
    estimate = batch_sigma2(doubling, ObservableSpec("cos"), 256, 4000, rng)
    assert abs(estimate.value - 0.5) <= 3.0 * estimate.stderr


@pytest.mark.parametrize("name", ["doubling", "lsv"])
def test_duality(name, request, rng):
    map = request.getfixturevalue(name)
    op = transfer_operator(map, 1024 if name == "doubling" else None)
    f = op.sample(lambda x: x * x)
    gap, stderr = duality_gap(map, f, lambda x: np.cos(3.0 * x), 20_000, rng)
    assert abs(gap) < 4.0 * stderr + (1e-4 if name == "doubling" else 1e-2)


def test_variance_estimators_agree(doubling, rng):
    v = center(ObservableSpec("poly", coeffs=(0.0, 0.0, 1.0)), doubling)
    dec = gordin_decompose(doubling, v)
    gk = green_kubo_sigma2(doubling, v, 40)
    assert gk.sigma2 == pytest.approx(dec.sigma2_m, abs=1e-5)
    estimate = batch_sigma2(doubling, v, 1024, 4000, rng)
    assert abs(estimate.value - dec.sigma2_m) <= 3.0 * estimate.stderr + 1e-3
