"""Common exception patterns for curvectrl."""

from typing import Any, Dict, Optional, Sequence


class CurvectrlError(Exception):
    """Base class for every error raised by curvectrl."""

    def __init__(self, detail: str) -> None:
        super().__init__(detail)
        self.detail = detail


class InvalidArgument(CurvectrlError):
    pass


class PointOutsideDomain(CurvectrlError):
    def __init__(self, detail: str, point: Sequence[float]) -> None:
        super().__init__(detail)
        self.point = tuple(float(c) for c in point)


class CurveOutsideDomain(CurvectrlError):
    def __init__(self, detail: str, t: float) -> None:
        super().__init__(detail)
        self.t = t


class SolverFailure(CurvectrlError):
    """Raised when an iterative linear solve misses its tolerance."""

    def __init__(self, detail: str, residual: float, iterations: int) -> None:
        super().__init__(detail)
        self.residual = residual
        self.iterations = iterations


class Nonconvergence(CurvectrlError):
    """Raised by optimizers that exhaust their iteration budget.

    The best iterate found so far and the solver diagnostics travel with the
    exception so callers can still inspect or persist them.
    """

    def __init__(
        self, detail: str, best: Any = None, diagnostics: Optional[Dict] = None
    ) -> None:
        super().__init__(detail)
        self.best = best
        self.diagnostics = diagnostics or {}


class ConfigError(CurvectrlError):
    pass


class ExpressionSyntaxError(CurvectrlError):
    def __init__(self, detail: str, offset: int) -> None:
        super().__init__(f"{detail} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExpressionSyntaxError):
    def __init__(self, name: str, offset: int) -> None:
        super().__init__(f"unknown identifier '{name}'", offset)
        self.name = name


def invalid_argument(detail: str) -> InvalidArgument:
    """Return error for an argument outside its documented range."""
    return InvalidArgument(detail)


def point_outside_domain(point: Sequence[float]) -> PointOutsideDomain:
    """Return error for a point that no triangle of the mesh contains."""
    return PointOutsideDomain(
        f"point ({float(point[0])!r}, {float(point[1])!r}) lies outside the domain", point
    )


def curve_outside_domain(t: float, margin: float) -> CurveOutsideDomain:
    """Return error for a curve leaving the interior subdomain."""
    return CurveOutsideDomain(
        f"curve closer than {margin} to the boundary at t={t!r}", t
    )


def solver_failure(residual: float, iterations: int) -> SolverFailure:
    """Return error for a conjugate-gradient solve that did not converge."""
    return SolverFailure(
        f"cg did not converge in {iterations} iterations "
        f"(relative residual {residual:.3e})",
        residual,
        iterations,
    )


def nonconvergence(
    solver: str, iterations: int, best: Any, diagnostics: Dict
) -> Nonconvergence:
    """Return error for an optimizer that ran out of iterations."""
    return Nonconvergence(
        f"{solver} did not converge in {iterations} iterations", best, diagnostics
    )


def config_error(detail: str) -> ConfigError:
    """Return error for an unreadable or invalid configuration."""
    return ConfigError(detail)


def dimension_mismatch(expected: int, got: int) -> InvalidArgument:
    """Return error for operands of incompatible sizes."""
    return InvalidArgument(f"dimension mismatch: expected {expected}, got {got}")
