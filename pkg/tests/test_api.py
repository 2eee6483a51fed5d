import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from wiplab import models
from wiplab.db import get_session
from wiplab.main import app
from wiplab.rates import GAMMA_STAR, r_wip


@pytest.fixture
def session_factory():
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool, future=True)
    models.Base.metadata.create_all(bind=engine)
    yield sessionmaker(bind=engine, autoflush=False, future=True)
    engine.dispose()


@pytest.fixture
def client(session_factory):
    def override():
        db = session_factory()
        try:
            yield db
        finally:
            db.close()

    app.dependency_overrides[get_session] = override
    yield TestClient(app)
    app.dependency_overrides.clear()


def _record(session, experiment, wall_clock, digest):
    session.add(models.RunRecord(
        experiment=experiment, seed="1", config="{}", version="test", wall_clock=wall_clock,
        rows="{}", output="out", digest=digest,
    ))


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}
    assert client.get("/ready").json() == {"ready": True}


def test_wip_rate(client):
    body = client.get("/rates/wip", params={"p": "4"}).json()
    assert body["p"] == 4.0
    assert body["r"] == pytest.approx(r_wip(4.0))
    assert body["r1"] > body["r"]


def test_wip_rate_at_infinity(client):
    body = client.get("/rates/wip", params={"p": "inf"}).json()
    assert body["p"] is None
    assert body["r"] == pytest.approx(0.25)


@pytest.mark.parametrize("p", ["2", "1.5", "abc"])
def test_wip_rate_rejects_bad_orders(client, p):
    response = client.get("/rates/wip", params={"p": p})
    assert response.status_code == 400
    assert response.json()["detail"]


def test_homog_rate(client):
    body = client.get("/rates/homog", params={"p": "inf"}).json()
    assert body["p"] is None
    assert body["exponent"] == pytest.approx(1.0 / 3.0)
    assert body["log_power"] is None


def test_lsv_rate(client):
    below = client.get("/rates/lsv", params={"gamma": 0.1}).json()
    assert below["gamma"] == 0.1
    assert not below["log_free"]
    assert below["wip"] == pytest.approx((1.0 - 0.2) / 4.0)
    above = client.get("/rates/lsv", params={"gamma": GAMMA_STAR + 0.05}).json()
    assert above["log_free"]
    assert client.get("/rates/lsv", params={"gamma": 0.6}).status_code == 400


def test_validate_endpoint(client):
    good = client.post("/validate", json={"experiment": "wip-rate", "scales": {"n": [64, 128]}})
    assert good.json() == {"violations": []}
    bad = client.post("/validate", json={"experiment": "wip-rate", "scales": {"n": [64]}, "ensemble": {"size": 1}})
    assert bad.json()["violations"] == ["ensemble.size must be at least 2"]
    assert client.post("/validate", json={"experiment": "nope"}).status_code == 422


def test_runs_pagination_and_filter(client, session_factory):
    with session_factory() as session:
        for i in range(5):
            _record(session, "wip-rate" if i % 2 == 0 else "clt", float(i), f"{i:064d}")
        session.commit()

    body = client.get("/runs", params={"per_page": 2, "sort_by": "wall_clock", "sort_order": "asc"}).json()
    assert body["total"] == 5
    assert body["per_page"] == 2
    assert [item["wall_clock"] for item in body["items"]] == [0.0, 1.0]

    page3 = client.get("/runs", params={"per_page": 2, "page": 3, "sort_by": "wall_clock", "sort_order": "asc"}).json()
    assert [item["wall_clock"] for item in page3["items"]] == [4.0]

    clt = client.get("/runs", params={"experiment": "clt"}).json()
    assert clt["total"] == 2
    assert {item["experiment"] for item in clt["items"]} == {"clt"}


def test_runs_sanitizes_arguments(client):
    body = client.get("/runs", params={"page": 0, "per_page": 1000, "sort_by": "password"}).json()
    assert (body["page"], body["per_page"], body["total"]) == (1, 100, 0)
    assert body["items"] == []
