import csv
import json
import logging

import pytest

from wiplab import rates
from wiplab.config import build_config
from wiplab.errors import ConfigError
from wiplab.maps import MapModel
from wiplab.runner import (
    DISTANCES,
    FITS,
    FLOOR_ESTIMATOR,
    FLOOR_MARGIN,
    HEADERS,
    MANIFEST,
    OUT_DIR_ENV,
    RATES,
    fmt,
    output_dir,
    predicted_slope,
    run,
    trend_warnings,
)


def _rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


@pytest.fixture
def wip_config():
    return build_config({
        "experiment": "wip-rate",
        "seed": 11,
        "scales": {"n": [16, 32, 64]},
        "ensemble": {"size": 12, "projection_dim": 4, "chunk": 5},
    })


def test_fmt():
    assert fmt(None) == ""
    assert fmt(True) == "true"
    assert fmt(3) == "3"
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt("hand") == "hand"


def test_wip_rate_tables(wip_config, tmp_path):
    manifest = run(wip_config, out_dir=str(tmp_path))
    distances = _rows(tmp_path / DISTANCES)
    assert [row["scale"] for row in distances] == ["16", "16", "32", "32", "64", "64"]
    assert [row["estimator"] for row in distances] == ["prokhorov", FLOOR_ESTIMATOR] * 3
    assert all(0.0 <= float(row["value"]) <= 1.0 for row in distances)
    with open(tmp_path / DISTANCES) as handle:
        assert handle.readline().rstrip("\n") == ",".join(HEADERS[DISTANCES])
    assert len(_rows(tmp_path / FITS)) == 1
    assert manifest.rows == {DISTANCES: 6, FITS: 1}


def test_same_bytes_for_any_worker_count(wip_config, tmp_path):
    serial = run(wip_config, out_dir=str(tmp_path / "serial"))
    again = run(wip_config, out_dir=str(tmp_path / "again"))
    pooled = run(wip_config, workers=2, out_dir=str(tmp_path / "pooled"))
    for name in (DISTANCES, FITS):
        expected = (tmp_path / "serial" / name).read_bytes()
        assert (tmp_path / "again" / name).read_bytes() == expected
        assert (tmp_path / "pooled" / name).read_bytes() == expected
    assert serial.digest == again.digest == pooled.digest


def test_seed_changes_the_output(wip_config, tmp_path):
    first = run(wip_config, out_dir=str(tmp_path / "a"))
    other = run(wip_config.model_copy(update={"seed": 12}), out_dir=str(tmp_path / "b"))
    assert first.digest != other.digest


def test_manifest(wip_config, tmp_path):
    manifest = run(wip_config, out_dir=str(tmp_path))
    stored = json.loads((tmp_path / MANIFEST).read_text())
    assert stored["experiment"] == "wip-rate"
    assert stored["seed"] == 11
    assert stored["digest"] == manifest.digest
    assert len(manifest.digest) == 64
    assert stored["config"]["scales"]["n"] == [16, 32, 64]
    assert stored["wall_clock"] >= 0.0


def test_fastslow_with_trivial_drift_matches_wip_rate(tmp_path):
    common = {"seed": 5, "ensemble": {"size": 16, "projection_dim": 4}}
    fast = build_config({"experiment": "fastslow-rate", "scales": {"eps": [0.0625]}, **common})
    wip = build_config({"experiment": "wip-rate", "scales": {"n": [256]}, **common})
    run(fast, out_dir=str(tmp_path / "fast"))
    run(wip, out_dir=str(tmp_path / "wip"))
    fast_rows = _rows(tmp_path / "fast" / DISTANCES)
    wip_rows = _rows(tmp_path / "wip" / DISTANCES)
    assert [row["estimator"] for row in fast_rows][1] == "prokhorov-psi"
    assert fast_rows[0]["value"] == wip_rows[0]["value"]
    assert fast_rows[0]["estimator"] == wip_rows[0]["estimator"]
    assert fast_rows[2]["estimator"] == wip_rows[1]["estimator"] == FLOOR_ESTIMATOR
    assert fast_rows[2]["value"] == wip_rows[1]["value"]


def test_prokhorov_selftest_agrees_with_the_oracle(tmp_path):
    config = build_config({
        "experiment": "prokhorov-selftest",
        "selftest": {"instances": 40, "max_atoms": 5, "dims": [1, 2]},
        "ensemble": {"chunk": 8},
    })
    run(config, out_dir=str(tmp_path))
    rows = _rows(tmp_path / DISTANCES)
    assert len(rows) == 42
    summary = rows[-1]
    assert summary["scale"] == "summary"
    assert summary["value"] == "41"
    assert summary["aux1"] == "0"
    hand = rows[-2]
    assert (hand["scale"], hand["value"]) == ("hand", "0.5")


def test_rate_table(tmp_path):
    gammas = [0.05 * k for k in range(1, 10)]
    config = build_config({"experiment": "rate-table", "scales": {"gamma": gammas}})
    manifest = run(config, out_dir=str(tmp_path))
    rows = _rows(tmp_path / RATES)
    assert manifest.rows == {RATES: 9}
    assert [float(row["param"]) for row in rows] == pytest.approx(gammas)
    assert rows[0]["branch"].endswith("log")
    assert not (tmp_path / DISTANCES).exists()


def test_decomp_check_on_doubling(tmp_path):
    config = build_config({
        "experiment": "decomp-check",
        "transfer": {"samples": 512, "batch_length": 64, "correlation_terms": 20},
    })
    run(config, out_dir=str(tmp_path))
    rows = {row["estimator"]: row for row in _rows(tmp_path / DISTANCES)}
    assert set(rows) == {"coboundary-residual", "martingale-residual", "sigma2-m", "green-kubo", "batch"}
    assert float(rows["sigma2-m"]["value"]) == pytest.approx(0.25, abs=1e-6)
    assert float(rows["green-kubo"]["value"]) == pytest.approx(0.25, abs=1e-6)


def test_invalid_config_writes_nothing(tmp_path):
    config = build_config({"experiment": "wip-rate", "scales": {"n": [64]}, "ensemble": {"size": 1}})
    with pytest.raises(ConfigError):
        run(config, out_dir=str(tmp_path / "never"))
    assert not (tmp_path / "never").exists()


def test_output_dir_precedence(wip_config, monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert str(output_dir(wip_config)) == "out"
    monkeypatch.setenv(OUT_DIR_ENV, "from-env")
    assert str(output_dir(wip_config)) == "from-env"
    assert str(output_dir(wip_config, "from-flag")) == "from-flag"


def test_floor_rows_stay_out_of_the_fit(wip_config, tmp_path):
    run(wip_config, out_dir=str(tmp_path))
    distances = _rows(tmp_path / DISTANCES)
    floors = [float(row["value"]) for row in distances if row["estimator"] == FLOOR_ESTIMATOR]
    assert len(floors) == 3
    assert all(0.0 <= value <= 1.0 for value in floors)
    values = [float(row["value"]) for row in distances if row["estimator"] == "prokhorov"]
    fit = rates.fit_rate([16, 32, 64], values)
    assert float(_rows(tmp_path / FITS)[0]["slope"]) == pytest.approx(fit.slope, rel=1e-15)


def test_trend_warnings(caplog):
    with caplog.at_level(logging.WARNING, logger="wiplab.runner"):
        messages = trend_warnings("wip-rate", 0.0032, [0.1584, 0.1589, 0.1606], [0.16, 0.1602, 0.1604])
    assert len(messages) == 2
    assert "no convergence trend" in messages[0]
    assert "same-law floor" in messages[1]
    assert len(caplog.records) == 2
    assert trend_warnings("wip-rate", -0.2, [0.4, 0.3, 0.2], [0.16, 0.16, 0.16]) == []
    assert trend_warnings("fastslow-rate", 0.3, [0.2, 0.4], [0.1, 0.1], sign=1.0) == []
    assert len(trend_warnings("fastslow-rate", -0.1, [0.2, 0.4], [0.1, 0.1], sign=1.0)) == 1
    edge = [FLOOR_MARGIN * 0.2, 0.15]
    assert len(trend_warnings("wip-rate", None, edge, [0.2, 0.1])) == 1


def test_predicted_slope():
    assert predicted_slope(MapModel.doubling()) == -0.25
    assert predicted_slope(MapModel.lsv(0.25)) == pytest.approx(-0.125)
    assert predicted_slope(MapModel.doubling(), homogenization=True) == pytest.approx(1.0 / 3.0)
