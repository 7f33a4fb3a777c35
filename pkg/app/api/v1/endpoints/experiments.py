from typing import List, Optional

from fastapi import APIRouter, Depends, Query
from fastapi.responses import JSONResponse
from pydantic import ValidationError

from app.api.deps import get_settings
from app.core.config import Settings
from app.core.errors import ConfigurationError, InvariantViolation, VolterraError
from app.schemas.experiment import ExperimentConfig, ExperimentKind
from app.schemas.reports import ErrorResponse, RunReport, ValidateResponse
from app.services import acceptance, pipeline

router = APIRouter()

ERROR_RESPONSES = {
    422: {"model": ErrorResponse, "description": "Invalid configuration"},
    409: {"model": ErrorResponse, "description": "Numerical invariant violated"},
    500: {"model": ErrorResponse, "description": "Unexpected failure"},
}


def _status_for(exc: Exception) -> int:
    if isinstance(exc, (ConfigurationError, ValidationError)):
        return 422
    if isinstance(exc, InvariantViolation):
        return 409
    return 500


def _error(exc: Exception, status_code: int | None = None) -> JSONResponse:
    """ErrorResponse body carrying the exit code the CLI would use."""
    if isinstance(exc, VolterraError):
        exit_code = exc.exit_code
    else:
        exit_code = ConfigurationError.exit_code if isinstance(exc, (ValueError, ValidationError)) else 1
    body = ErrorResponse(error=f"{type(exc).__name__}: {exc}", exit_code=exit_code)
    return JSONResponse(status_code=status_code or _status_for(exc), content=body.model_dump())


@router.post("/run", response_model=RunReport, responses=ERROR_RESPONSES)
def run_experiment(
    config: ExperimentConfig,
    kind: Optional[ExperimentKind] = Query(None, description="Override the pipeline named in the config"),
    write: bool = Query(False, description="Also write artifacts under OUTPUT_DIR"),
    settings: Settings = Depends(get_settings),
):
    """
    Run one experiment and return its report
    """
    try:
        return pipeline.run(config, kind=kind.value if kind else None, out=settings.OUTPUT_DIR, write=write)
    except Exception as e:
        return _error(e)


@router.post("/validate", response_model=ValidateResponse, responses=ERROR_RESPONSES)
def validate_experiments(
    only: Optional[List[int]] = Query(None, description="Criterion numbers to run; all when omitted"),
):
    """
    Run acceptance criteria
    """
    try:
        report = acceptance.validate_suite(only, progress=False)
        return ValidateResponse(passed=report.passed, report=report)
    except VolterraError as e:
        return _error(e)
    except ValueError as e:
        return _error(e, status_code=422)
    except Exception as e:
        return _error(e)
