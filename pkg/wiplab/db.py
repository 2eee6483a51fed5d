import os
from typing import Any, Dict

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine, make_url
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

DATABASE_URL = os.environ.get("DATABASE_URL", "sqlite:///./wiplab.db")
DATABASE_ECHO = os.environ.get("DATABASE_ECHO", "").lower() in ("1", "true", "yes")


def engine_options(url: str) -> Dict[str, Any]:
    """Pool settings per backend: the API serves SQLite from worker threads, Postgres over the network."""
    parsed = make_url(url)
    if parsed.get_backend_name() != "sqlite":
        return {"pool_pre_ping": True}
    options: Dict[str, Any] = {"connect_args": {"check_same_thread": False}}
    if parsed.database in (None, "", ":memory:"):
        # one shared connection, or every session sees an empty ledger
        options["poolclass"] = StaticPool
    return options


def make_engine(url: str = DATABASE_URL, echo: bool = DATABASE_ECHO) -> Engine:
    return create_engine(url, echo=echo, future=True, **engine_options(url))


engine = make_engine()
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine, future=True)


def get_session():
    """Yield a ledger session (for use with dependency injection)."""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
