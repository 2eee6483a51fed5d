import csv
import math

import numpy as np
import pytest
from scipy import stats

from wiplab.errors import DegenerateVarianceError, LengthError, RangeError, TimeChangedPath
from wiplab.observables import ObservableSpec, center
from wiplab.paths import (
    SamplePath,
    brownian_block,
    brownian_sup_tail,
    build_wn,
    build_xn,
    clamp_time_change,
    coupled_paths,
    coupling_block,
    dyadic_times,
    martingale_coupling_gap,
    noise_increments,
    path_functionals,
    project,
    projected_ensemble,
    sup_distance,
    terminal_values,
    time_reverse_g,
    uniform_grid,
    wn_block,
    wn_ensemble,
)
from wiplab.transfer import gordin_decompose


@pytest.fixture
def v_doubling(doubling):
    return center(ObservableSpec("x"), doubling)


def test_sample_path_validation():
    with pytest.raises(LengthError):
        SamplePath(np.array([1.0]))
    with pytest.raises(LengthError):
        SamplePath(np.zeros(3), np.array([0.0, 1.0]))
    with pytest.raises(RangeError):
        SamplePath(np.zeros(3), np.array([0.1, 0.5, 1.0]))
    path = SamplePath(np.array([0.0, 2.0, 4.0]))
    assert path.n == 2
    assert not path.time_changed
    assert path.evaluate(0.25) == 1.0


def test_build_wn():
    w = build_wn([1.0, 1.0, 1.0, 1.0, 7.0], 4)
    assert w.values.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]
    with pytest.raises(LengthError):
        build_wn([1.0, 1.0], 4)
    with pytest.raises(LengthError):
        build_wn([1.0], 0)


def test_build_xn_runs_on_the_time_change():
    x = build_xn([1.0, 1.0, 1.0, 1.0], [0.0, 0.5, 1.0, 1.5, 2.0], 1.0)
    assert x.time_changed
    assert x.times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert x.values.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]
    with pytest.raises(DegenerateVarianceError):
        build_xn([1.0, 1.0], [0.0, 0.5, 1.0], 0.0)
    with pytest.raises(LengthError):
        build_xn([1.0, 1.0], [0.0, 1.0], 1.0)


def test_clamp_time_change():
    V, removed = clamp_time_change([0.0, 0.5, 0.25, 1.0])
    assert V.tolist() == [0.0, 0.5, 0.5, 1.25]
    assert removed == 0.25
    same, none = clamp_time_change([0.0, 0.5, 1.0])
    assert none == 0.0
    assert same.tolist() == [0.0, 0.5, 1.0]


def test_time_reversal_is_an_involution_on_paths_from_zero():
    u = SamplePath(np.array([0.0, 0.25, -0.5, 0.75, 0.5]))
    assert time_reverse_g(u).values.tolist() == [0.0, -0.25, 1.0, 0.25, 0.5]
    assert np.array_equal(time_reverse_g(time_reverse_g(u)).values, u.values)
    with pytest.raises(TimeChangedPath):
        time_reverse_g(SamplePath(np.zeros(3), np.array([0.0, 0.3, 1.0])))


def test_noise_and_brownian_tail():
    z = np.array([1.0, -2.0, 0.5])
    assert noise_increments(4.0, 1.0 / 1024, z).tolist() == [0.0625, -0.125, 0.03125]
    assert brownian_sup_tail(0.0, 1.0) == 1.0
    assert brownian_sup_tail(1.0, 1.0) == pytest.approx(2.0 * stats.norm.sf(1.0))
    assert brownian_sup_tail(1.0, 4.0) == pytest.approx(2.0 * stats.norm.sf(0.5))
    with pytest.raises(RangeError):
        brownian_sup_tail(-1.0, 1.0)


def test_path_functionals():
    f = path_functionals(SamplePath(np.array([0.0, 1.0, -1.0, 0.5])), times=[0.5])
    assert (f.terminal, f.sup, f.inf, f.sup_abs) == (0.5, 1.0, -1.0, 1.0)
    assert f.integral == pytest.approx(1.0 / 12.0)
    assert f.at[0] == pytest.approx(0.0)


def test_sup_distance_sees_interior_breakpoints():
    u = SamplePath(np.array([0.0, 1.0, 0.0]))
    w = SamplePath(np.array([0.0, 0.0]))
    assert sup_distance(u, w) == 1.0


def test_projection_helpers():
    assert dyadic_times(4).tolist() == [0.25, 0.5, 0.75, 1.0]
    with pytest.raises(RangeError):
        dyadic_times(0)
    values = np.array([[0.0, 1.0, 2.0, 3.0, 4.0]])
    assert project(values, uniform_grid(4), np.array([0.125, 1.0])).tolist() == [[0.5, 4.0]]


def test_blocks_depend_only_on_path_index(doubling, v_doubling):
    whole = wn_block(doubling, v_doubling, 64, 7, 0, 8)
    part = wn_block(doubling, v_doubling, 64, 7, 2, 6)
    assert np.array_equal(whole[2:6], part)
    assert np.all(whole[:, 0] == 0.0)
    noise = brownian_block(0.25, 64, 7, 0, 4)
    assert np.array_equal(noise[1:3], brownian_block(0.25, 64, 7, 1, 3))


def test_projected_ensemble_ignores_chunking(doubling, v_doubling):
    times = dyadic_times(4)
    block = lambda start, stop: wn_block(doubling, v_doubling, 32, 3, start, stop)  # noqa: E731
    a = projected_ensemble(block, uniform_grid(32), times, 20, chunk=3)
    b = projected_ensemble(block, uniform_grid(32), times, 20, chunk=64)
    assert a.shape == (20, 4)
    assert np.array_equal(a, b)


def test_wn_ensemble_export(doubling, v_doubling, tmp_path):
    ensemble = wn_ensemble(doubling, v_doubling, 4, 3, seed=1)
    assert len(ensemble) == 3 and ensemble.n == 4
    target = tmp_path / "paths.csv"
    ensemble.export_csv(str(target))
    with open(target) as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["path_id", "node_index", "t", "value"]
    assert len(rows) == 1 + 3 * 5
    assert np.array_equal(terminal_values([ensemble.project([0.0, 1.0])]), ensemble.project([1.0])[:, 0])


def test_coupled_paths_share_one_orbit(doubling, v_doubling, rng):
    dec = gordin_decompose(doubling, v_doubling)
    orbit_values = rng.random(257)
    wn, sxn = coupled_paths(dec, orbit_values)
    assert wn.n == 256 and sxn.n == 256
    assert sxn.time_changed
    assert wn.values[-1] == pytest.approx(np.sum(orbit_values[:256] - 0.5) / 16.0, abs=1e-9)
    gap = martingale_coupling_gap(dec, 1024, rng)
    assert 0.0 <= gap < 2.0
    gaps = coupling_block(dec, 256, 5, 0, 4)
    assert gaps.shape == (4,)
    assert np.array_equal(gaps[1:], coupling_block(dec, 256, 5, 1, 4))


def test_w_n_terminal_is_nearly_gaussian(doubling, v_doubling):
    terminal = wn_block(doubling, v_doubling, 1024, 11, 0, 2000)[:, -1]
    assert terminal.mean() == pytest.approx(0.0, abs=4.0 * 0.5 / math.sqrt(2000))
    assert stats.kstest(terminal, stats.norm(scale=0.5).cdf).statistic < 0.06
