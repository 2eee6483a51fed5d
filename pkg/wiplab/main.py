import math
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException
from sqlalchemy import asc, desc
from sqlalchemy.orm import Session

from wiplab import models, rates, schemas
from wiplab.db import get_session
from wiplab.errors import LabError
from wiplab.validation import validate

app = FastAPI(title="wiplab rates and run ledger")


@app.get("/health", status_code=200)
def health():
    return {"status": "ok"}


@app.get("/ready", status_code=200)
def ready():
    return {"ready": True}


def _order(p: str) -> float:
    # "inf" selects the exponential-tail limit
    try:
        return float(p)
    except ValueError:
        raise HTTPException(status_code=400, detail=f"order p must be a number, got {p!r}")


def _finite(value: float) -> Optional[float]:
    # JSON has no infinity
    return value if math.isfinite(value) else None


@app.get("/rates/wip", response_model=schemas.WipRateRead)
def wip_rate(p: str):
    order = _order(p)
    try:
        return {
            "p": _finite(order),
            "r": rates.r_wip(order),
            "r1": rates.r1_wip(order),
            "lambda2": rates.lambda2_exponent(order),
            "coupling": rates.coupling_exponent(order),
        }
    except LabError as exc:
        raise HTTPException(status_code=400, detail=exc.detail)


@app.get("/rates/homog", response_model=schemas.HomogRateRead)
def homog_rate(p: str):
    order = _order(p)
    try:
        rate = rates.r_homog(order)
    except LabError as exc:
        raise HTTPException(status_code=400, detail=exc.detail)
    return {"p": _finite(order), "exponent": rate.exponent, "log_power": _finite(rate.log_power)}


@app.get("/rates/lsv", response_model=schemas.LsvRateRead)
def lsv_rate(gamma: float):
    try:
        rate = rates.lsv_rates(gamma)
    except LabError as exc:
        raise HTTPException(status_code=400, detail=exc.detail)
    return {"gamma": rate.gamma, "wip": rate.wip, "homog": rate.homog, "log_free": rate.log_free, "log_power": rate.log_power}


@app.post("/validate", response_model=schemas.ValidationResult)
def validate_config(config: schemas.ExperimentConfig):
    return {"violations": validate(config)}


@app.get("/runs", response_model=schemas.PaginatedRuns)
def list_runs(
    page: int = 1,
    per_page: int = 20,
    experiment: Optional[str] = None,
    sort_by: str = "created_at",
    sort_order: str = "desc",
    db: Session = Depends(get_session),
):
    # sanitize pagination args
    page = max(1, page)
    per_page = max(1, min(100, per_page))

    q = db.query(models.RunRecord)
    if experiment:
        q = q.filter(models.RunRecord.experiment == experiment)

    total = q.count()

    allowed_sort_fields = {"created_at", "id", "wall_clock", "experiment"}
    if sort_by not in allowed_sort_fields:
        sort_by = "created_at"
    sort_col = getattr(models.RunRecord, sort_by)
    q = q.order_by(desc(sort_col) if sort_order.lower() == "desc" else asc(sort_col))

    items = q.offset((page - 1) * per_page).limit(per_page).all()
    return {"items": items, "total": total, "page": page, "per_page": per_page}
