from __future__ import annotations
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ProfileKind(str, Enum):

    GAUSSIAN_HEAT = "GaussianHeat"
    BARENBLATT_PME = "BarenblattPME"
    BARENBLATT_FDE = "BarenblattFDE"


def critical_exponents(d: int) -> tuple[float, float]:
    """(m_c1, m_c2) = (1 - 2/d, 1 - 2/(d+2))."""
    return 1.0 - 2.0 / d, 1.0 - 2.0 / (d + 2)


class SchemeParams(BaseModel):
    """Diffusion exponent, time step and dimension of one JKO scheme."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    m: float = Field(..., gt=0.0, description="Diffusion exponent in d_t rho = Lap rho^m")
    tau: float = Field(..., gt=0.0, description="JKO time step")
    d: int = Field(..., ge=1, le=2, description="Space dimension")
    truncated: bool = Field(False, description="Domain is a truncation of an unbounded one")

    # ───────────────────────── validators ────────────────────────
    @model_validator(mode="after")
    def _check_regime(self) -> "SchemeParams":
        m_c1, m_c2 = critical_exponents(self.d)
        if self.m <= m_c1:
            raise ValueError(f"m = {self.m} is not above m_c1 = {m_c1:g} for d = {self.d}")
        if self.truncated and self.m <= m_c2:
            raise ValueError(
                f"m = {self.m} is not above m_c2 = {m_c2:g}; unbounded domains need a finite second moment"
            )
        return self

    @property
    def exponent(self) -> float:
        """d(m-1)+2, the exponent of F_{d,m}."""
        return self.d * (self.m - 1.0) + 2.0

    @property
    def ab_constant(self) -> float:
        return self.d / self.exponent

    @property
    def is_linear(self) -> bool:
        return self.m == 1.0


__all__ = ["ProfileKind", "SchemeParams", "critical_exponents"]
