"""
Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 numerical invariant
violation or failed acceptance criterion, 1 anything else.
"""
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import VolterraError
from app.core.logging import configure_logging
from app.schemas.experiment import ExperimentKind
from app.services import acceptance, pipeline
from app.utils.exporters import write_json

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3


def _fail(message: str, code: int) -> None:
    click.echo(message, err=True)
    sys.exit(code)


def _run_kind(kind: ExperimentKind, config: str, out: Optional[str], seed: Optional[int],
              threads: Optional[int]) -> None:
    try:
        report = pipeline.run(config, kind=kind.value, out=out, seed=seed, threads=threads)
    except ValidationError as exc:
        _fail(f"invalid configuration:\n{exc}", EXIT_CONFIG)
    except (json.JSONDecodeError, FileNotFoundError) as exc:
        _fail(f"cannot read configuration: {exc}", EXIT_CONFIG)
    except VolterraError as exc:
        _fail(f"{type(exc).__name__}: {exc}", exc.exit_code)
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        _fail(f"unexpected error: {exc}", EXIT_UNEXPECTED)
    for check in report.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'}  {check.name}")
    click.echo(f"report: {report.name} ({report.kind}), config hash {report.config_hash}")
    if not report.passed:
        sys.exit(EXIT_INVARIANT)


def _experiment_command(kind: ExperimentKind, help_text: str):
    @click.command(name=kind.value, help=help_text)
    @click.option("--config", "config", required=True, type=click.Path(dir_okay=False), help="JSON experiment file")
    @click.option("--out", default=None, help=f"Output directory (default {settings.OUTPUT_DIR})")
    @click.option("--seed", type=click.IntRange(min=0), default=None, help="Master seed")
    @click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads")
    def command(config, out, seed, threads):
        _run_kind(kind, config, out, seed, threads)

    return command


@click.group()
@click.option("--log-level", default=None, help="Logging level (default from LOG_LEVEL)")
@click.version_option(settings.APP_VERSION, prog_name=settings.APP_NAME)
def cli(log_level: Optional[str]) -> None:
    """Insider control of stochastic Volterra equations."""
    configure_logging(log_level or settings.LOG_LEVEL)


cli.add_command(_experiment_command(ExperimentKind.SIMULATE, "Simulate drivers, signal and state."))
cli.add_command(_experiment_command(ExperimentKind.DONSKER, "Evaluate and export the Donsker field."))
cli.add_command(_experiment_command(ExperimentKind.ADJOINT, "Solve the adjoint equation."))
cli.add_command(_experiment_command(ExperimentKind.CHECK, "Check the maximum principles against a brute-force oracle."))
cli.add_command(_experiment_command(ExperimentKind.PORTFOLIO, "Solve the insider portfolio problem."))


@cli.command()
@click.option("--only", default=None, help="Comma-separated criterion numbers, e.g. 1,2,8")
@click.option("--out", default=None, help="Write the acceptance report under <out>/validate")
def validate(only: Optional[str], out: Optional[str]) -> None:
    """Run the acceptance battery."""
    try:
        selected = [int(part) for part in only.split(",") if part.strip()] if only else None
        report = acceptance.validate_suite(selected)
    except ValueError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        _fail(f"unexpected error: {exc}", EXIT_UNEXPECTED)
    for check in report.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'}  {check.name}  {check.detail}")
    if out:
        write_json(report.deterministic_dump(), Path(out) / "validate" / "report.json")
    if not report.passed:
        sys.exit(EXIT_INVARIANT)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
