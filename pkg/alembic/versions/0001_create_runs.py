"""create run ledger

Revision ID: 0001_create_runs
Revises: 
Create Date: 2026-10-18 00:00:00
"""
from alembic import op
import sqlalchemy as sa

revision = "0001_create_runs"
down_revision = None
branch_labels = None
depends_on = None


def upgrade():
    op.create_table(
        "runs",
        sa.Column("id", sa.Integer, primary_key=True),
        sa.Column("experiment", sa.String(32), nullable=False),
        sa.Column("seed", sa.String(20), nullable=False),
        sa.Column("config", sa.Text, nullable=False),
        sa.Column("version", sa.String(32), nullable=False),
        sa.Column("wall_clock", sa.Float, nullable=False),
        sa.Column("rows", sa.Text, nullable=False),
        sa.Column("output", sa.String(1024), nullable=False),
        sa.Column("digest", sa.String(64), nullable=False),
        sa.Column("created_at", sa.DateTime(timezone=True), server_default=sa.func.now(), nullable=False),
    )
    op.create_index("ix_runs_experiment", "runs", ["experiment"], unique=False)
    op.create_index("ix_runs_digest", "runs", ["digest"], unique=False)


def downgrade():
    op.drop_index("ix_runs_digest", table_name="runs")
    op.drop_index("ix_runs_experiment", table_name="runs")
    op.drop_table("runs")
