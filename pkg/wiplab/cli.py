"""Command line entry point: one subcommand per experiment kind, plus ``validate``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from wiplab import __version__
from wiplab.config import load_config
from wiplab.db import SessionLocal, engine
from wiplab.errors import ConfigError, LabError
from wiplab.models import Base
from wiplab.runner import record_run, run
from wiplab.schemas import ExperimentKind
from wiplab.validation import validate

logger = logging.getLogger("wiplab")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="experiment file of dotted key = value lines")
    parser.add_argument("--seed", type=_u64, metavar="U64", help="overrides the config's master seed")
    parser.add_argument("--log-level", default=os.environ.get("LOG_LEVEL", "INFO"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wiplab", description="Weak invariance principle rate experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ExperimentKind:
        run = sub.add_parser(kind.value, help=f"run the {kind.value} experiment")
        _common(run)
        run.add_argument("--workers", type=int, default=1, metavar="N")
        run.add_argument("--out", metavar="DIR", help="output directory (beats WIPLAB_OUT_DIR)")
        run.add_argument("--record", action="store_true", help="append the run to the ledger database")
    check = sub.add_parser("validate", help="list admissibility violations of a config")
    _common(check)
    return parser


def _fail(exc: LabError) -> int:
    sys.stderr.write(json.dumps(exc.to_record(), default=str) + "\n")
    return exc.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)-5.5s [%(name)s] %(message)s",
        stream=sys.stderr,
    )
    overrides = {"seed": args.seed}
    if args.command != "validate":
        overrides["experiment"] = args.command
    try:
        config = load_config(args.config, overrides)
        if args.command == "validate":
            violations = validate(config)
            print(json.dumps({"violations": violations}, indent=2))
            return ConfigError.exit_code if violations else 0
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1", field="workers")
        manifest = run(config, workers=args.workers, out_dir=args.out)
        if args.record:
            Base.metadata.create_all(bind=engine)
            with SessionLocal() as session:
                record = record_run(session, manifest)
            logger.info("recorded run %d", record.id)
        print(manifest.model_dump_json(indent=2))
    except LabError as exc:
        return _fail(exc)
    return 0
