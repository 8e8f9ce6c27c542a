from __future__ import annotations
import math
from enum import Enum
from typing import Any

from pydantic import BaseModel, Field, computed_field, field_validator

SUMMARY_SCHEMA_VERSION = "1.0"


class RunStatus(str, Enum):

    PASSED = "PASSED"
    CHECK_FAILED = "CHECK_FAILED"
    RUNTIME_ERROR = "RUNTIME_ERROR"
    CONFIG_ERROR = "CONFIG_ERROR"

    @property
    def exit_code(self) -> int:
        return {RunStatus.PASSED: 0, RunStatus.CONFIG_ERROR: 2}.get(self, 1)


class CheckStatus(str, Enum):

    PASS = "PASS"
    FAIL = "FAIL"
    SKIPPED = "SKIPPED"


class CheckResult(BaseModel):
    """One pass/fail verdict with the number it was decided on."""

    name: str = Field(..., description="Check identifier, e.g. ab_item2")
    status: CheckStatus
    margin: float | None = Field(None, description="Signed distance to the threshold (>= 0 passes)")
    slack: float | None = Field(None, description="Slack budget granted to the check")
    details: dict[str, Any] = Field(default_factory=dict)

    # ───────────────────────── validators ────────────────────────
    @field_validator("margin", "slack", mode="before")
    @classmethod
    def _finite_or_none(cls, v: float | None) -> float | None:
        """JSON has no infinities; non-finite margins are stored as null."""
        if v is None:
            return None
        v = float(v)
        return v if math.isfinite(v) else None

    @classmethod
    def of(cls, name: str, ok: bool, margin: float | None = None, slack: float | None = None,
           **details: Any) -> "CheckResult":
        return cls(name=name, status=CheckStatus.PASS if ok else CheckStatus.FAIL,
                   margin=margin, slack=slack, details=details)

    @property
    def ok(self) -> bool:
        return self.status is not CheckStatus.FAIL


class SuiteReport(BaseModel):
    name: str
    checks: list[CheckResult] = Field(default_factory=list)

    @computed_field
    @property
    def status(self) -> CheckStatus:
        return CheckStatus.PASS if all(c.ok for c in self.checks) else CheckStatus.FAIL

    @computed_field
    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.ok]


class RunSummary(BaseModel):
    """Contents of summary.json."""

    schema_version: str = SUMMARY_SCHEMA_VERSION
    run_name: str
    status: RunStatus
    exit_code: int
    seed: int
    params: dict[str, Any] = Field(default_factory=dict)
    checks: list[CheckResult] = Field(default_factory=list)
    artifacts: dict[str, str] = Field(default_factory=dict, description="Artifact name -> MD5")
    error: str | None = None


__all__ = [
    "SUMMARY_SCHEMA_VERSION",
    "RunStatus",
    "CheckStatus",
    "CheckResult",
    "SuiteReport",
    "RunSummary",
]
