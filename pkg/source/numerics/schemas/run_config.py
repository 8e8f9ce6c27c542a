"""
Run configuration: one TOML file per experiment.

    [domain]   kind, bounds | radius
    [grid]     n, quantiles
    [scheme]   m, tau, K, time_offset
    [solver]   tol, method, eps, sinkhorn_tol, max_iter
    [initial]  source = "profile" | "file" | "expression"
    [checks]   which certifications run and their tolerances
    [output]   dir, dump_fields, dump_every

Every table forbids unknown keys so a typo fails validation instead of being
ignored.
"""
from __future__ import annotations
import tomllib
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from numerics.errors import ConfigError
from numerics.schemas.domain import Domain, DomainKind
from numerics.schemas.scheme import ProfileKind, SchemeParams


class DomainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: DomainKind
    bounds: list[tuple[float, float]] | None = Field(None, description="Per-axis (lo, hi); default bounds of the kind if omitted")
    radius: float | None = Field(None, gt=0.0, description="Truncation radius; sized from the initial datum if omitted")

    def build(self) -> Domain:
        return Domain.of(self.kind, self.bounds, self.radius)


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int | list[int] = Field(..., description="Cells per axis")
    quantiles: int | None = Field(None, ge=4, description="Lagrangian resolution N in 1D (default 4n)")

    @field_validator("n")
    @classmethod
    def _positive(cls, v: int | list[int]) -> int | list[int]:
        counts = [v] if isinstance(v, int) else v
        if not counts or any(k < 4 for k in counts):
            raise ValueError("every axis needs at least 4 cells")
        return v


class SchemeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    m: float = Field(..., gt=0.0)
    tau: float = Field(..., gt=0.0)
    K: int = Field(..., ge=1, description="Number of JKO steps")
    time_offset: float = Field(0.0, ge=0.0, description="Clock value of the initial datum")


class SolverMethodName(str, Enum):

    NEWTON = "newton"
    PROJECTED_GRADIENT = "projected_gradient"


class SolverSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-9, gt=0.0, description="Stationarity tolerance of one step")
    method: SolverMethodName = SolverMethodName.NEWTON
    eps: float | None = Field(None, gt=0.0, description="Entropic regularization (2D only)")
    sinkhorn_tol: float = Field(1e-8, gt=0.0)
    max_iter: int = Field(500, ge=1, description="L-BFGS-B iteration cap (2D)")
    max_cells: int = Field(96, ge=4, description="Cells-per-axis cap of the 2D solver")


class InitialSource(str, Enum):

    PROFILE = "profile"
    FILE = "file"
    EXPRESSION = "expression"


class BumpShape(str, Enum):

    GAUSSIAN = "gaussian"
    COSINE = "cosine"
    INDICATOR = "indicator"


class BumpSpec(BaseModel):
    """One predefined term of an expression datum."""

    model_config = ConfigDict(extra="forbid")

    shape: BumpShape
    amplitude: float = 1.0
    center: list[float] | None = Field(None, description="Bump centre (gaussian, indicator)")
    width: float | None = Field(None, gt=0.0, description="Standard deviation or half-width")
    modes: list[int] | None = Field(None, description="Wave numbers per axis (cosine)")

    # ───────────────────────── validators ────────────────────────
    @model_validator(mode="after")
    def _check_shape(self) -> "BumpSpec":
        if self.shape is BumpShape.COSINE:
            if not self.modes:
                raise ValueError("cosine bumps need `modes`")
        elif self.center is None or self.width is None:
            raise ValueError(f"{self.shape.value} bumps need `center` and `width`")
        return self


class InitialDatumSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: InitialSource
    profile: ProfileKind | None = None
    t0: float | None = Field(None, gt=0.0, description="Profile time; defaults to the scheme's time_offset")
    center: list[float] | None = None
    path: Path | None = Field(None, description="Field dump (.bin with .json header) or .npy array")
    background: float = Field(1.0, ge=0.0, description="Constant added to the bumps")
    bumps: list[BumpSpec] = Field(default_factory=list)

    # ───────────────────────── validators ────────────────────────
    @model_validator(mode="after")
    def _check_source(self) -> "InitialDatumSpec":
        if self.source is InitialSource.PROFILE and self.profile is None:
            raise ValueError("profile data need `profile`")
        if self.source is InitialSource.FILE and self.path is None:
            raise ValueError("file data need `path`")
        return self


class LinftySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: list[float]
    radius: float = Field(..., gt=0.0)
    t0: float | None = Field(None, description="First checked time; defaults to the first step")


class ChecksSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ab: bool = True
    item3_eps: float = Field(0.1, gt=0.0)
    k0: int | None = Field(None, ge=1, description="First step of the late-time bound; scanned if omitted")
    ratio_slack: float = Field(0.0, ge=0.0, description="Extra MA ratio slack (entropic runs)")
    residual_tol: float = Field(1e-5, gt=0.0)
    eulerian_residual_tol: float = Field(1e-4, gt=0.0, description="Residual from the grid density and grid potential")
    optimality: bool = True
    energy: bool = True
    energy_tol: float = Field(1e-8, gt=0.0)
    bounds: bool = False
    linfty: LinftySpec | None = None
    heat_reference: bool = False
    reference_l1_tol: float = Field(5e-2, gt=0.0)
    profile_reference: bool = False
    boundary: bool = False


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: Path | None = None
    dump_fields: bool = False
    dump_every: int = Field(1, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "run"
    seed: int | None = Field(None, ge=0)
    domain: DomainSpec
    grid: GridSpec
    scheme: SchemeSpec
    solver: SolverSpec = Field(default_factory=SolverSpec)
    initial: InitialDatumSpec
    checks: ChecksSpec = Field(default_factory=ChecksSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    # ───────────────────────── validators ────────────────────────
    @model_validator(mode="after")
    def _check_run(self) -> "RunConfig":
        d = self.d
        counts = self.grid.n if isinstance(self.grid.n, list) else [self.grid.n] * d
        if len(counts) != d:
            raise ValueError(f"{self.domain.kind.value} needs {d} cell counts")
        # regime gate: SchemeParams raises before any step runs
        self.params()
        if d == 2 and self.solver.eps is None:
            raise ValueError("two-dimensional runs need solver.eps")
        if self.checks.heat_reference and (self.scheme.m != 1.0 or self.domain.kind.value not in ("Torus1", "Torus2")):
            raise ValueError("the spectral heat reference needs m = 1 on a torus")
        if self.checks.boundary and self.domain.kind.value not in ("Square", "Box2"):
            raise ValueError("boundary behavior is checked on Square/Box2")
        if self.checks.profile_reference and self.initial.source is not InitialSource.PROFILE:
            raise ValueError("profile_reference needs a profile initial datum")
        return self

    @property
    def d(self) -> int:
        return self.domain.build().d

    def params(self) -> SchemeParams:
        domain = self.domain.build()
        return SchemeParams(m=self.scheme.m, tau=self.scheme.tau, d=domain.d, truncated=domain.is_truncated)


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run config; relative data paths resolve against its folder."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path} is not valid TOML: {err}") from err

    config = RunConfig.model_validate(raw)
    datum = config.initial
    if datum.path is not None:
        resolved = datum.path if datum.path.is_absolute() else path.parent / datum.path
        if not resolved.exists():
            raise ConfigError(f"initial datum file not found: {resolved}")
        config = config.model_copy(update={"initial": datum.model_copy(update={"path": resolved})})
    return config


__all__ = [
    "DomainSpec",
    "GridSpec",
    "SchemeSpec",
    "SolverMethodName",
    "SolverSpec",
    "InitialSource",
    "BumpShape",
    "BumpSpec",
    "InitialDatumSpec",
    "LinftySpec",
    "ChecksSpec",
    "OutputSpec",
    "RunConfig",
    "load_run_config",
]
