"""Time partitions, the moving-source curve and piecewise-constant controls."""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Annotated, Any, Callable, Literal, Mapping, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from . import expression
from .exceptions import ExpressionSyntaxError, curve_outside_domain, invalid_argument

logger = structlog.get_logger()

# Curves must keep this distance from the boundary of the unit square.
DEFAULT_MARGIN = 0.1
UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))
CURVE_SAMPLES = 1000
# Sampling density used where C_gamma has no closed form.
C_GAMMA_SAMPLES = 10_001

Point = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class TimePartition:
    """Nodes 0 = t_0 < ... < t_M = T. Interval m (0-based) is (t_m, t_{m+1}]."""

    nodes: np.ndarray

    @classmethod
    def from_nodes(cls, nodes) -> "TimePartition":
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise invalid_argument("a partition needs at least two nodes")
        if nodes[0] != 0.0:
            raise invalid_argument("partitions start at t = 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise invalid_argument("partition nodes must be strictly increasing")
        return cls(nodes)

    @property
    def M(self) -> int:
        return len(self.nodes) - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @cached_property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def k(self) -> float:
        """Maximal time step."""
        return float(self.steps.max())

    @cached_property
    def kappa(self) -> float:
        """Largest ratio k_{m+1} / k_m."""
        if self.M == 1:
            return 1.0
        return float((self.steps[1:] / self.steps[:-1]).max())

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.steps == self.steps[0]))

    def interval_of(self, t) -> np.ndarray:
        """0-based interval index containing t; t = 0 maps to the first interval."""
        idx = np.searchsorted(self.nodes, t, side="left") - 1
        return np.clip(idx, 0, self.M - 1)

    def refine(self) -> "TimePartition":
        """Bisect every interval; uniform partitions stay exactly nested."""
        if self.is_uniform:
            return uniform_partition(self.T, 2 * self.M)
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        nodes = np.empty(2 * self.M + 1)
        nodes[0::2] = self.nodes
        nodes[1::2] = mids
        return TimePartition.from_nodes(nodes)

    def gauss_points(self) -> Tuple[np.ndarray, np.ndarray]:
        """Two-point Gauss nodes and weights per interval, shapes (M, 2)."""
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        offset = self.steps / (2.0 * math.sqrt(3.0))
        times = np.stack([mid - offset, mid + offset], axis=1)
        weights = np.repeat(0.5 * self.steps[:, None], 2, axis=1)
        return times, weights


def uniform_partition(T: float, M: int) -> TimePartition:
    """k_m = T / M; node m is computed as (m * T) / M so doubling M nests exactly."""
    if not T > 0.0:
        raise invalid_argument(f"T must be positive, got {T!r}")
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise invalid_argument(f"M must be a positive integer, got {M!r}")
    nodes = np.arange(M + 1) * float(T) / M
    nodes[-1] = T
    return TimePartition(nodes)


def pi_k(partition: TimePartition, v: Callable[[float], Any]) -> np.ndarray:
    """Right-endpoint projection: interval m carries v(t_{m+1})."""
    return np.asarray([v(t) for t in partition.nodes[1:]])


class _CurveBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def position(self, t) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def velocity(self, t) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def c_gamma(self, T: float) -> float:
        """max |gamma'(t)| over [0, T] by dense sampling."""
        t = np.linspace(0.0, T, C_GAMMA_SAMPLES)
        return float(np.linalg.norm(self.velocity(t), axis=-1).max())


def _stack(x, y) -> np.ndarray:
    x, y = np.broadcast_arrays(x, y)
    return np.stack([x, y], axis=-1).astype(float)


class FixedCurve(_CurveBase):
    kind: Literal["fixed"] = "fixed"
    center: Point = (0.5, 0.5)

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return _stack(np.full(t.shape, self.center[0]), np.full(t.shape, self.center[1]))

    def velocity(self, t) -> np.ndarray:
        return np.zeros(np.shape(t) + (2,))

    def c_gamma(self, T: float) -> float:
        return 0.0


class CircleCurve(_CurveBase):
    kind: Literal["circle"] = "circle"
    center: Point = (0.5, 0.5)
    radius: float = 0.2
    omega: float = 2.0 * math.pi
    phase: float = 0.0

    def position(self, t) -> np.ndarray:
        angle = self.omega * np.asarray(t, dtype=float) + self.phase
        return _stack(
            self.center[0] + self.radius * np.cos(angle),
            self.center[1] + self.radius * np.sin(angle),
        )

    def velocity(self, t) -> np.ndarray:
        angle = self.omega * np.asarray(t, dtype=float) + self.phase
        speed = self.radius * self.omega
        return _stack(-speed * np.sin(angle), speed * np.cos(angle))

    def c_gamma(self, T: float) -> float:
        return abs(self.radius * self.omega)


class SegmentCurve(_CurveBase):
    """Constant-speed motion from start (t = 0) to end (t = duration)."""

    kind: Literal["segment"] = "segment"
    start: Point = (0.3, 0.5)
    end: Point = (0.7, 0.5)
    duration: float = 1.0

    @field_validator("duration")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError("duration must be positive")
        return value

    def position(self, t) -> np.ndarray:
        s = np.asarray(t, dtype=float) / self.duration
        return _stack(
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        )

    def velocity(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        vx = (self.end[0] - self.start[0]) / self.duration
        vy = (self.end[1] - self.start[1]) / self.duration
        return _stack(np.full(t.shape, vx), np.full(t.shape, vy))

    def c_gamma(self, T: float) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]) / self.duration


class LissajousCurve(_CurveBase):
    kind: Literal["lissajous"] = "lissajous"
    center: Point = (0.5, 0.5)
    amplitude: Point = (0.2, 0.2)
    frequency: Point = (2.0 * math.pi, 4.0 * math.pi)
    phase: float = 0.5 * math.pi

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return _stack(
            self.center[0] + self.amplitude[0] * np.sin(self.frequency[0] * t + self.phase),
            self.center[1] + self.amplitude[1] * np.sin(self.frequency[1] * t),
        )

    def velocity(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        ax, ay = self.amplitude
        fx, fy = self.frequency
        return _stack(
            ax * fx * np.cos(fx * t + self.phase), ay * fy * np.cos(fy * t)
        )


class ExpressionCurve(_CurveBase):
    """Curve given by two expressions in t; gamma' by central differences."""

    kind: Literal["expression"] = "expression"
    x_expr: str
    y_expr: str

    @field_validator("x_expr", "y_expr")
    @classmethod
    def _parses(cls, value: str) -> str:
        try:
            expression.parse_expression(value, variables=("t",))
        except ExpressionSyntaxError as exc:
            raise ValueError(exc.detail) from exc
        return value

    @cached_property
    def _compiled(self) -> Tuple[expression.Expression, expression.Expression]:
        return (
            expression.parse_expression(self.x_expr, variables=("t",)),
            expression.parse_expression(self.y_expr, variables=("t",)),
        )

    def position(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        fx, fy = self._compiled
        return _stack(fx.evaluate(t=t), fy.evaluate(t=t))

    def velocity(self, t, step: float = 1e-6) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (self.position(t + step) - self.position(t - step)) / (2.0 * step)


Curve = Annotated[
    Union[FixedCurve, CircleCurve, SegmentCurve, LissajousCurve, ExpressionCurve],
    Field(discriminator="kind"),
]
_CURVE_ADAPTER: TypeAdapter = TypeAdapter(Curve)


def curve_from_mapping(data: Mapping[str, Any]) -> Curve:
    """Validate a {"kind": ..., parameters...} mapping into a curve."""
    return _CURVE_ADAPTER.validate_python(dict(data))


def boundary_distance(points: np.ndarray, box=UNIT_SQUARE) -> np.ndarray:
    (x0, x1), (y0, y1) = box
    x, y = points[..., 0], points[..., 1]
    return np.minimum.reduce([x - x0, x1 - x, y - y0, y1 - y])


def check_containment(
    curve: Curve, T: float, margin: float = DEFAULT_MARGIN, box=UNIT_SQUARE
) -> None:
    """Raise CurveOutsideDomain unless gamma stays margin away from the boundary."""
    t = np.linspace(0.0, T, CURVE_SAMPLES)
    dist = boundary_distance(curve.position(t), box)
    bad = np.flatnonzero(dist < margin - 1e-12)
    if len(bad):
        logger.warning("curve_outside_domain", t=float(t[bad[0]]), margin=margin)
        raise curve_outside_domain(float(t[bad[0]]), margin)


def discretize_curve(
    curve: Curve,
    partition: TimePartition,
    margin: float = DEFAULT_MARGIN,
    box=UNIT_SQUARE,
) -> np.ndarray:
    """gamma_k on interval m is gamma(t_{m+1}); returns an (M, 2) array."""
    check_containment(curve, partition.T, margin, box)
    points = curve.position(partition.nodes[1:])
    dist = boundary_distance(points, box)
    if np.any(dist < margin - 1e-12):
        bad = int(np.flatnonzero(dist < margin - 1e-12)[0])
        raise curve_outside_domain(float(partition.nodes[bad + 1]), margin)
    return points


def sigma_k(points: np.ndarray, h: float, m: int, x) -> np.ndarray:
    """sqrt(|x - gamma_k,m|^2 + h^2) for the 0-based interval m."""
    d = np.asarray(x, dtype=float) - points[m]
    return np.sqrt((d * d).sum(axis=-1) + h * h)


def sigma(curve: Curve, h: float, t: float, x) -> np.ndarray:
    """sqrt(|x - gamma(t)|^2 + h^2)."""
    d = np.asarray(x, dtype=float) - curve.position(t)
    return np.sqrt((d * d).sum(axis=-1) + h * h)


@dataclass(frozen=True, eq=False)
class Control:
    """Piecewise-constant control: values[m] on interval m, bounds qa <= qb."""

    partition: TimePartition
    values: np.ndarray
    qa: float = -math.inf
    qb: float = math.inf

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float).reshape(-1)
        if len(values) != self.partition.M:
            raise invalid_argument(
                f"control has {len(values)} values for {self.partition.M} intervals"
            )
        if not self.qa <= self.qb:
            raise invalid_argument(f"bounds must satisfy qa <= qb, got [{self.qa}, {self.qb}]")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, partition: TimePartition, qa: float = -math.inf, qb: float = math.inf):
        return cls(partition, np.zeros(partition.M), qa, qb)

    def with_values(self, values) -> "Control":
        return Control(self.partition, values, self.qa, self.qb)

    def is_feasible(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.values >= self.qa - tol) and np.all(self.values <= self.qb + tol))

    def inner(self, other) -> float:
        """L2(I) inner product with another control or value array."""
        other_values = other.values if isinstance(other, Control) else np.asarray(other)
        return float(np.sum(self.partition.steps * self.values * other_values))

    def l2_norm(self) -> float:
        return math.sqrt(self.inner(self))
