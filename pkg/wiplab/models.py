from sqlalchemy import Column, DateTime, Float, Index, Integer, String, Text, func
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class RunRecord(Base):
    """One executed experiment run; config and row counts are stored as JSON text."""

    __tablename__ = "runs"
    id = Column(Integer, primary_key=True)
    experiment = Column(String(32), nullable=False, index=True)
    # unsigned 64-bit seeds overflow a signed BIGINT
    seed = Column(String(20), nullable=False)
    config = Column(Text, nullable=False)
    version = Column(String(32), nullable=False)
    wall_clock = Column(Float, nullable=False)
    rows = Column(Text, nullable=False)
    output = Column(String(1024), nullable=False)
    digest = Column(String(64), nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now(), nullable=False)

    __table_args__ = (Index("ix_runs_digest", "digest"),)
