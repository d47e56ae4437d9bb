"""Configuration models for curvectrl studies."""

import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import expression
from .exceptions import ExpressionSyntaxError
from .timeline import DEFAULT_MARGIN, CircleCurve, Curve

# Study modes
MODE_CONTROL = "control"
MODE_STATE = "state"
MODE_FORWARD = "forward"

# Time-step coupling per refinement level
COUPLING_H2 = "h2"  # M grows by 4 per level, k ~ h^2
COUPLING_H = "h"  # M grows by 2 per level, k ~ h
COUPLING_FIXED = "fixed"

SOLVER_PDAS = "pdas"
SOLVER_PROJECTED_GRADIENT = "projected_gradient"


def _check_expression(value: Optional[str], variables=expression.DEFAULT_VARIABLES) -> Optional[str]:
    if value is None:
        return value
    try:
        expression.parse_expression(value, variables)
    except ExpressionSyntaxError as exc:
        raise ValueError(exc.detail) from exc
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Section):
    """Unit square meshed with n x n cells on level 0."""

    n: int = Field(default=8, ge=1)
    levels: int = Field(default=3, ge=1)
    margin: float = Field(default=DEFAULT_MARGIN, ge=0.0, lt=0.5)


class TimeConfig(_Section):
    M: int = Field(default=8, ge=1)
    T: float = Field(default=1.0, gt=0.0)
    coupling: Literal["h2", "h", "fixed"] = COUPLING_H2


class ControlConfig(_Section):
    alpha: float = Field(default=1.0, gt=0.0)
    qa: float = -math.inf
    qb: float = math.inf
    # Fixed control q(t) for single solves and state studies.
    q_expr: Optional[str] = None

    @field_validator("q_expr")
    @classmethod
    def _q_parses(cls, value: Optional[str]) -> Optional[str]:
        return _check_expression(value, variables=("t",))

    @model_validator(mode="after")
    def _ordered_bounds(self) -> "ControlConfig":
        if not self.qa <= self.qb:
            raise ValueError(f"bounds must satisfy qa <= qb, got [{self.qa}, {self.qb}]")
        return self


class DataConfig(_Section):
    """Desired state, forward right-hand side and exact solution in (t, x, y)."""

    uhat_expr: Optional[str] = None
    f_expr: Optional[str] = None
    exact_expr: Optional[str] = None

    @field_validator("uhat_expr", "f_expr", "exact_expr")
    @classmethod
    def _parses(cls, value: Optional[str]) -> Optional[str]:
        return _check_expression(value)


class SolverConfig(_Section):
    method: Literal["pdas", "projected_gradient"] = SOLVER_PDAS
    tol: float = Field(default=1e-8, gt=0.0)
    max_outer: int = Field(default=50, ge=1)
    max_iter: int = Field(default=500, ge=1)


class ReferenceConfig(_Section):
    """The reference level is extra_levels finer than the finest study level."""

    extra_levels: int = Field(default=2, ge=1)


class OutputConfig(_Section):
    dir: str = "out"
    timings: bool = True


class StudySection(_Section):
    mode: Literal["control", "state", "forward"] = MODE_CONTROL
    seed: int = 0


class StudyConfig(BaseModel):
    """A complete run description; every section falls back to its defaults."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    domain: DomainConfig = DomainConfig()
    time: TimeConfig = TimeConfig()
    control: ControlConfig = ControlConfig()
    curve: Curve = Field(default_factory=CircleCurve)
    data: DataConfig = DataConfig()
    solver: SolverConfig = SolverConfig()
    reference: ReferenceConfig = ReferenceConfig()
    output: OutputConfig = OutputConfig()
    study: StudySection = StudySection()

    @model_validator(mode="after")
    def _mode_inputs(self) -> "StudyConfig":
        if self.study.mode == MODE_STATE and self.control.q_expr is None:
            raise ValueError("study.mode 'state' needs control.q_expr")
        if self.study.mode == MODE_FORWARD and self.data.f_expr is None:
            raise ValueError("study.mode 'forward' needs data.f_expr")
        return self

    def level_size(self, level: int) -> int:
        """Cells per side on a refinement level."""
        return self.domain.n * 2**level

    def level_steps(self, level: int) -> int:
        """Number of time intervals on a refinement level."""
        factor = {COUPLING_H2: 4, COUPLING_H: 2, COUPLING_FIXED: 1}[self.time.coupling]
        return self.time.M * factor**level

    @property
    def reference_level(self) -> int:
        return self.domain.levels - 1 + self.reference.extra_levels
