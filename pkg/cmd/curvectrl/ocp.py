"""Discrete reduced optimal control problem with a moving point source.

The control q is piecewise constant on the time partition (its discreteness
is induced by the projection formula, it has no discrete space of its own).
The reduced functional j(q) = J(q, u_kh(q)) is a strongly convex quadratic,
so both solvers below converge to the same unique minimizer.
"""

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import structlog
from scipy.sparse.linalg import LinearOperator

from . import heat
from .exceptions import SolverFailure, invalid_argument, nonconvergence
from .fespace import FeSpace
from .heat import SpaceTimeField, Trajectory
from .sparse import CsrMatrix, cg_solve
from .timeline import Control, TimePartition

logger = structlog.get_logger()

DEFAULT_TOL = 1e-8
DEFAULT_MAX_OUTER = 50
DEFAULT_MAX_ITER = 500
# Inner CG tolerance relative to the outer tolerance.
INNER_TOL_FACTOR = 1e-2
# Desired-state loads are cached while M * n_dofs stays below this.
LOAD_CACHE_LIMIT = 5_000_000

ControlLike = Union[Control, np.ndarray]


@dataclass(frozen=True, eq=False)
class OcpProblem:
    """min 1/2 ||u - u_hat||^2 + alpha/2 ||q||^2 subject to qa <= q <= qb."""

    space: FeSpace
    partition: TimePartition
    curve_points: np.ndarray
    alpha: float
    qa: float = -math.inf
    qb: float = math.inf
    u_hat: Optional[SpaceTimeField] = None

    def __post_init__(self) -> None:
        if not self.alpha > 0.0:
            raise invalid_argument(f"alpha must be positive, got {self.alpha!r}")
        if not self.qa <= self.qb:
            raise invalid_argument(f"bounds must satisfy qa <= qb, got [{self.qa}, {self.qb}]")
        if self.curve_points.shape != (self.partition.M, 2):
            raise invalid_argument("curve_points must have one point per interval")

    @property
    def steps(self) -> np.ndarray:
        return self.partition.steps

    @cached_property
    def trace(self) -> CsrMatrix:
        return heat.curve_trace_operator(self.space, self.curve_points)

    @cached_property
    def _load_cache(self) -> Dict[int, np.ndarray]:
        return {}

    def desired_load(self, m: int) -> np.ndarray:
        """Integral over I_m of (u_hat, phi_i), Gauss-2 in time."""
        if self.u_hat is None:
            return np.zeros(self.space.n_dofs)
        if m in self._load_cache:
            return self._load_cache[m]
        load = heat.interval_load(self.space, self.partition, self.u_hat, m)
        if self.partition.M * self.space.n_dofs <= LOAD_CACHE_LIMIT:
            self._load_cache[m] = load
        return load

    @cached_property
    def u_hat_norm_sq(self) -> float:
        """||u_hat||^2 over I x Omega with the quadrature used for errors."""
        if self.u_hat is None:
            return 0.0
        points, weights, _ = self.space.quadrature
        times, tweights = self.partition.gauss_points()
        total = 0.0
        for t, tw in zip(times.ravel(), tweights.ravel()):
            values = np.broadcast_to(self.u_hat(t, points[..., 0], points[..., 1]), weights.shape)
            total += tw * float(np.sum(weights * values**2))
        return total

    @cached_property
    def data_trace(self) -> np.ndarray:
        """Curve trace of the adjoint driven by -u_hat alone (gradient at q = 0)."""
        if self.u_hat is None:
            return np.zeros(self.partition.M)
        z = heat.solve_backward_source(self.space, self.partition, lambda m: -self.desired_load(m))
        return heat.eval_along_curve(z, self.curve_points, self.trace)

    def control(self, values) -> Control:
        return Control(self.partition, values, self.qa, self.qb)

    def state(self, q: ControlLike) -> Trajectory:
        return heat.solve_forward_source(
            self.space, self.partition, self.curve_points, _values(q), self.trace
        )

    def adjoint(self, u: Trajectory) -> Trajectory:
        return heat.solve_adjoint(self.space, self.partition, u, desired_load=self.desired_load)

    def adjoint_trace(self, q: ControlLike) -> np.ndarray:
        """z_kh(q)(t_m, gamma_k,m) per interval."""
        return self._linear_trace(_values(q)) + self.data_trace

    def _linear_trace(self, values: np.ndarray) -> np.ndarray:
        # Trace of the adjoint driven by u_kh(values) alone: the S*S part.
        if not np.any(values):
            return np.zeros(self.partition.M)
        u = self.state(values)
        steps, mass = self.steps, self.space.mass
        z = heat.solve_backward_source(self.space, self.partition, lambda m: steps[m] * (mass @ u.frames[m]))
        return heat.eval_along_curve(z, self.curve_points, self.trace)

    def hessian_apply(self, p: np.ndarray) -> np.ndarray:
        """Reduced Hessian alpha p + S*S p, one forward and one adjoint solve."""
        p = np.asarray(p, dtype=float)
        return self.alpha * p + self._linear_trace(p)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(self.steps * a * b))

    def norm(self, a: np.ndarray) -> float:
        return math.sqrt(self.inner(a, a))

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.qa, self.qb)


def _values(q: ControlLike) -> np.ndarray:
    return q.values if isinstance(q, Control) else np.asarray(q, dtype=float)


def reduced_value(p: OcpProblem, q: ControlLike) -> float:
    """j(q) = 1/2 ||u_kh(q) - u_hat||^2 + alpha/2 ||q||^2."""
    values = _values(q)
    u = p.state(values)
    mass_norm_sq = float(np.sum(p.steps * u.norms_m() ** 2))
    cross = sum(float(u.frames[m] @ p.desired_load(m)) for m in range(p.partition.M))
    tracking = 0.5 * (mass_norm_sq - 2.0 * cross + p.u_hat_norm_sq)
    return tracking + 0.5 * p.alpha * p.inner(values, values)


def reduced_gradient(p: OcpProblem, q: ControlLike) -> np.ndarray:
    """g_m = alpha q_m + z_kh(q)(gamma_k,m); pair with weights k_m for j'(q)(dq)."""
    values = _values(q)
    return p.alpha * values + p.adjoint_trace(values)


def project_admissible(p: OcpProblem, v) -> Control:
    """Componentwise clamp min(qb, max(qa, v))."""
    return p.control(p.clamp(_values(v)))


def projected_gradient_residual(p: OcpProblem, values: np.ndarray, gradient: np.ndarray) -> float:
    """||q - P(q - g)|| in L2(I)."""
    return p.norm(values - p.clamp(values - gradient))


def optimality_residual(p: OcpProblem, q: ControlLike) -> float:
    """||q - P(-z_kh(q)(., gamma_k)/alpha)|| in L2(I)."""
    values = _values(q)
    return p.norm(values - p.clamp(-p.adjoint_trace(values) / p.alpha))


@dataclass
class SolverDiagnostics:
    solver: str
    outer_iterations: int = 0
    inner_iterations: int = 0
    residual: float = math.inf
    converged: bool = False
    objective: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def _require_feasible(p: OcpProblem, q0: Optional[ControlLike]) -> np.ndarray:
    if q0 is None:
        return p.clamp(np.zeros(p.partition.M))
    values = np.array(_values(q0), dtype=float)
    if values.shape != (p.partition.M,):
        raise invalid_argument(f"initial control needs {p.partition.M} values")
    if np.any(values < p.qa) or np.any(values > p.qb):
        raise invalid_argument("initial control must be feasible")
    return values


def _active_sets(p: OcpProblem, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lower = w <= p.qa
    upper = ~lower & (w >= p.qb)
    return lower, upper


def solve_pdas(
    p: OcpProblem,
    q0: Optional[ControlLike] = None,
    tol: float = DEFAULT_TOL,
    max_outer: int = DEFAULT_MAX_OUTER,
) -> Tuple[Control, SolverDiagnostics]:
    """Primal-dual active set iteration on the projection formula.

    Each outer step fixes q at the bounds where w = -z(gamma)/alpha leaves
    [qa, qb] and solves alpha q + S*S q = -data on the remaining indices by
    matrix-free CG. Stops once the active sets repeat and the projected
    gradient residual is at most tol.

    Raises:
        InvalidArgument: q0 infeasible
        Nonconvergence: max_outer exhausted; carries the best iterate
    """
    q = _require_feasible(p, q0)
    diagnostics = SolverDiagnostics(solver="pdas")
    steps = p.steps
    gradient = reduced_gradient(p, q)
    lower, upper = _active_sets(p, -(gradient - p.alpha * q) / p.alpha)
    best, best_residual = q.copy(), projected_gradient_residual(p, q, gradient)

    for outer in range(1, max_outer + 1):
        inactive = ~(lower | upper)
        fixed = np.where(lower, p.qa, np.where(upper, p.qb, 0.0))
        q_new = fixed.copy()
        if np.any(inactive):
            idx = np.flatnonzero(inactive)
            # Symmetric in the Euclidean product once scaled by the step sizes.
            base = p.hessian_apply(fixed) + p.data_trace
            rhs = -steps[idx] * base[idx]

            def apply(x: np.ndarray) -> np.ndarray:
                full = np.zeros(p.partition.M)
                full[idx] = x
                return steps[idx] * p.hessian_apply(full)[idx]

            operator = LinearOperator((len(idx), len(idx)), matvec=apply, dtype=float)
            try:
                result = cg_solve(
                    operator, rhs, rel_tol=INNER_TOL_FACTOR * tol, precond="none", x0=q[idx]
                )
            except SolverFailure as exc:
                logger.error("pdas_inner_cg_failed", outer=outer, residual=exc.residual)
                raise
            diagnostics.inner_iterations += result.iterations
            q_new[idx] = result.x

        q = q_new
        gradient = reduced_gradient(p, q)
        residual = projected_gradient_residual(p, q, gradient)
        new_lower, new_upper = _active_sets(p, -(gradient - p.alpha * q) / p.alpha)
        repeated = np.array_equal(new_lower, lower) and np.array_equal(new_upper, upper)
        diagnostics.outer_iterations = outer
        diagnostics.residual = residual
        if residual < best_residual and np.array_equal(p.clamp(q), q):
            best, best_residual = q.copy(), residual
        logger.info(
            "pdas_iteration",
            outer=outer,
            active_lower=int(new_lower.sum()),
            active_upper=int(new_upper.sum()),
            residual=residual,
            sets_repeated=repeated,
        )
        if repeated and residual <= tol:
            diagnostics.converged = True
            diagnostics.objective.append(reduced_value(p, q))
            return p.control(q), diagnostics
        lower, upper = new_lower, new_upper

    raise nonconvergence("pdas", max_outer, p.control(best), diagnostics.to_dict())


def solve_projected_gradient(
    p: OcpProblem,
    q0: Optional[ControlLike] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Tuple[Control, SolverDiagnostics]:
    """Projected gradient with exact line search along d = P(q - g/alpha) - q.

    j is quadratic, so the step s = -(g, d) / (d, Hd), capped at 1 to stay
    feasible, is the exact minimiser along d and j decreases monotonically.
    The gradient is updated affinely, g <- g + s Hd, and recomputed from
    scratch before convergence is accepted.
    """
    q = _require_feasible(p, q0)
    diagnostics = SolverDiagnostics(solver="projected_gradient")
    gradient = reduced_gradient(p, q)
    value = reduced_value(p, q)
    diagnostics.objective.append(value)

    for it in range(1, max_iter + 1):
        residual = projected_gradient_residual(p, q, gradient)
        if residual <= tol:
            gradient = reduced_gradient(p, q)
            residual = projected_gradient_residual(p, q, gradient)
            if residual <= tol:
                diagnostics.converged = True
                diagnostics.residual = residual
                diagnostics.outer_iterations = it - 1
                return p.control(q), diagnostics

        direction = p.clamp(q - gradient / p.alpha) - q
        hd = p.hessian_apply(direction)
        curvature = p.inner(direction, hd)
        slope = p.inner(gradient, direction)
        step = 1.0 if curvature <= 0.0 else min(1.0, -slope / curvature)
        q = p.clamp(q + step * direction)
        gradient = gradient + step * hd
        value = value + step * slope + 0.5 * step * step * curvature
        diagnostics.objective.append(value)
        diagnostics.outer_iterations = it
        diagnostics.residual = residual
        logger.debug("projected_gradient_step", iteration=it, step=step, residual=residual)

    raise nonconvergence("projected_gradient", max_iter, p.control(q), diagnostics.to_dict())
