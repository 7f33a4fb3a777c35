from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class CheckResult(BaseModel):
    name: str = Field(..., description="Check or acceptance-criterion name")
    passed: bool = Field(..., description="Outcome")
    value: Optional[float] = Field(None, description="Measured quantity")
    threshold: Optional[float] = Field(None, description="Bound the value is compared with")
    detail: str = Field("", description="Human-readable context")


class RunReport(BaseModel):
    name: str = Field(..., description="Experiment name")
    kind: str = Field(..., description="Pipeline that produced the report")
    config: Dict[str, Any] = Field(default_factory=dict, description="Echo of the validated configuration")
    config_hash: str = Field("", description="Hash of the canonical configuration")
    checks: List[CheckResult] = Field(default_factory=list, description="Per-check outcomes")
    summary: Dict[str, Any] = Field(default_factory=dict, description="Numeric summaries")
    artifacts: Dict[str, str] = Field(default_factory=dict, description="Artifact paths relative to the run directory")
    timings: Dict[str, float] = Field(default_factory=dict, description="Wall-clock seconds per stage")

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def deterministic_dump(self) -> Dict[str, Any]:
        """Everything except timings; stable across reruns."""
        return self.model_dump(mode="json", exclude={"timings"})


class ErrorResponse(BaseModel):
    error: str = Field(..., description="Error message")
    exit_code: int = Field(..., description="Matching CLI exit code")


class ValidateResponse(BaseModel):
    passed: bool = Field(..., description="All selected criteria passed")
    report: RunReport = Field(..., description="Acceptance report")
