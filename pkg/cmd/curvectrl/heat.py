"""dG(0)cG(1) solvers for the heat equation and its adjoint.

Testing the space-time form B with the indicator of I_m turns the dG(0)
scheme into one SPD solve per interval::

    forward:   (M + k_m A) U_m = M U_{m-1} + F_m,      U_0 = 0
    backward:  (M + k_m A) Z_m = M Z_{m+1} + G_m,      Z_{M+1} = 0

Frames are stored 0-based: frames[m] is the value on interval m.
"""

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Literal, Optional, Tuple, Union

import numpy as np
import structlog

from . import fespace
from .exceptions import invalid_argument
from .fespace import FeFunction, FeSpace
from .sparse import CsrMatrix, cg_solve, jacobi
from .timeline import Control, TimePartition

logger = structlog.get_logger()

SpaceTimeField = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
Forcing = Callable[[int], np.ndarray]

HEAT_REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Element of X^{0,1}_{k,h}: one coefficient vector per interval."""

    space: FeSpace
    partition: TimePartition
    frames: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.partition.M, self.space.n_dofs)
        if self.frames.shape != expected:
            raise invalid_argument(f"frames must have shape {expected}, got {self.frames.shape}")

    @classmethod
    def zeros(cls, space: FeSpace, partition: TimePartition) -> "Trajectory":
        return cls(space, partition, np.zeros((partition.M, space.n_dofs)))

    def frame(self, m: int) -> FeFunction:
        return FeFunction(self.space, self.frames[m])

    def jumps(self) -> np.ndarray:
        """[v]_m = v_{m+1} - v_m with the frame after the last one taken as 0."""
        padded = np.vstack([self.frames, np.zeros((1, self.space.n_dofs))])
        return np.diff(padded, axis=0)

    def norms_m(self) -> np.ndarray:
        """||U_m||_M per interval."""
        mass = self.space.mass
        return np.sqrt(np.einsum("mi,mi->m", self.frames, (mass @ self.frames.T).T))

    @cached_property
    def _evaluators(self) -> Dict[bytes, CsrMatrix]:
        return {}

    def evaluate(self, t: float, x, y) -> np.ndarray:
        """Space-time field interface: the frame of the interval containing t."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        points = np.stack([x.ravel(), y.ravel()], axis=1)
        key = points.tobytes()
        if key not in self._evaluators:
            self._evaluators.clear()
            self._evaluators[key] = fespace.evaluation_matrix(self.space, points)
        m = int(self.partition.interval_of(t))
        return (self._evaluators[key] @ self.frames[m]).reshape(x.shape)

    def __call__(self, t: float, x, y) -> np.ndarray:
        return self.evaluate(t, x, y)


def _csr_row(matrix: CsrMatrix, m: int) -> np.ndarray:
    out = np.zeros(matrix.shape[1])
    start, end = matrix.indptr[m], matrix.indptr[m + 1]
    out[matrix.indices[start:end]] = matrix.data[start:end]
    return out


class _Stepper:
    """Solves (M + k A) x = rhs, caching the system per distinct step size."""

    def __init__(self, space: FeSpace, partition: TimePartition) -> None:
        self.space = space
        self.partition = partition
        self._systems: Dict[float, Tuple[CsrMatrix, np.ndarray]] = {}
        self.iterations = 0

    def solve(self, m: int, rhs: np.ndarray, x0: Optional[np.ndarray]) -> np.ndarray:
        k = float(self.partition.steps[m])
        if k not in self._systems:
            system = (self.space.mass + k * self.space.stiffness).tocsr()
            self._systems[k] = (system, jacobi(system))
        system, inv_diag = self._systems[k]
        result = cg_solve(system, rhs, rel_tol=HEAT_REL_TOL, x0=x0, inv_diag=inv_diag)
        self.iterations += result.iterations
        return result.x


def _forward_sweep(space: FeSpace, partition: TimePartition, forcing: Forcing) -> Trajectory:
    stepper = _Stepper(space, partition)
    frames = np.zeros((partition.M, space.n_dofs))
    previous = np.zeros(space.n_dofs)
    for m in range(partition.M):
        rhs = space.mass @ previous + forcing(m)
        frames[m] = stepper.solve(m, rhs, x0=previous)
        previous = frames[m]
    logger.debug("forward_sweep_done", steps=partition.M, cg_iterations=stepper.iterations)
    return Trajectory(space, partition, frames)


def _backward_sweep(space: FeSpace, partition: TimePartition, forcing: Forcing) -> Trajectory:
    stepper = _Stepper(space, partition)
    frames = np.zeros((partition.M, space.n_dofs))
    following = np.zeros(space.n_dofs)
    for m in reversed(range(partition.M)):
        rhs = space.mass @ following + forcing(m)
        frames[m] = stepper.solve(m, rhs, x0=following)
        following = frames[m]
    logger.debug("backward_sweep_done", steps=partition.M, cg_iterations=stepper.iterations)
    return Trajectory(space, partition, frames)


def curve_trace_operator(space: FeSpace, curve_points: np.ndarray) -> CsrMatrix:
    """Sparse (M, n_dofs) matrix whose row m is point_load(gamma_k,m)."""
    return fespace.evaluation_matrix(space, curve_points)


def interval_load(space: FeSpace, partition: TimePartition, f: SpaceTimeField, m: int) -> np.ndarray:
    """Integral over I_m of assemble_load(f(t, .)) by two-point Gauss in time."""
    times, weights = partition.gauss_points()
    load = np.zeros(space.n_dofs)
    for t, w in zip(times[m], weights[m]):
        load += w * fespace.assemble_load(space, lambda x, y: f(t, x, y))
    return load


def _control_values(q: Union[Control, np.ndarray]) -> np.ndarray:
    return q.values if isinstance(q, Control) else np.asarray(q, dtype=float)


def solve_forward_source(
    space: FeSpace,
    partition: TimePartition,
    curve_points: np.ndarray,
    q: Union[Control, np.ndarray],
    trace: Optional[CsrMatrix] = None,
) -> Trajectory:
    """State u_kh(q) for the moving point source q(t) delta_{gamma_k(t)}."""
    values = _control_values(q)
    if len(values) != partition.M or len(curve_points) != partition.M:
        raise invalid_argument("control and curve must have one entry per interval")
    if trace is None:
        trace = curve_trace_operator(space, curve_points)
    steps = partition.steps
    return _forward_sweep(
        space, partition, lambda m: (steps[m] * values[m]) * _csr_row(trace, m)
    )


def solve_forward_field(space: FeSpace, partition: TimePartition, f: SpaceTimeField) -> Trajectory:
    """Discrete solution of B(v, phi) = (f, phi) over I x Omega."""
    return _forward_sweep(space, partition, lambda m: interval_load(space, partition, f, m))


def _same_partition(a: TimePartition, b: TimePartition) -> bool:
    return a is b or (a.M == b.M and np.array_equal(a.nodes, b.nodes))


def solve_adjoint(
    space: FeSpace,
    partition: TimePartition,
    u_kh: Trajectory,
    u_hat: Optional[SpaceTimeField] = None,
    desired_load: Optional[Forcing] = None,
) -> Trajectory:
    """Adjoint z_kh: B(phi, z) = (u_kh - u_hat, phi) over I x Omega.

    desired_load(m), when given, replaces the quadrature of u_hat on I_m.
    """
    if not _same_partition(u_kh.partition, partition):
        raise invalid_argument("adjoint and state must share the time partition")
    if u_kh.frames.shape[1] != space.n_dofs:
        raise invalid_argument("adjoint and state must share the finite element space")
    if desired_load is None and u_hat is not None:
        desired_load = lambda m: interval_load(space, partition, u_hat, m)  # noqa: E731
    steps = partition.steps
    mass = space.mass

    def forcing(m: int) -> np.ndarray:
        rhs = steps[m] * (mass @ u_kh.frames[m])
        if desired_load is not None:
            rhs = rhs - desired_load(m)
        return rhs

    return _backward_sweep(space, partition, forcing)


def solve_backward_source(
    space: FeSpace, partition: TimePartition, sources: Forcing
) -> Trajectory:
    """Backward sweep with an arbitrary per-interval right-hand side."""
    return _backward_sweep(space, partition, sources)


def b_form(
    v: Trajectory,
    w: Trajectory,
    mode: Literal["primal", "dual"] = "primal",
    stiffness: Optional[CsrMatrix] = None,
) -> float:
    """B(v, w) from its primal (jumps of v) or dual (jumps of w) expression."""
    if v.space is not w.space or not _same_partition(v.partition, w.partition):
        raise invalid_argument("b_form needs trajectories on the same space and partition")
    mass = v.space.mass
    stiffness = v.space.stiffness if stiffness is None else stiffness
    steps = v.partition.steps
    grad_term = float(np.sum(steps * np.einsum("mi,mi->m", v.frames, (stiffness @ w.frames.T).T)))
    mw = (mass @ w.frames.T).T
    if mode == "primal":
        previous = np.vstack([np.zeros((1, v.space.n_dofs)), v.frames[:-1]])
        return grad_term + float(np.sum((v.frames - previous) * mw))
    if mode == "dual":
        mv = (mass @ v.frames.T).T
        jumps = np.diff(w.frames, axis=0)
        return grad_term - float(np.sum(mv[:-1] * jumps)) + float(mv[-1] @ w.frames[-1])
    raise invalid_argument(f"unknown b_form mode {mode!r}")


def gradient_norm_sq(v: Trajectory) -> float:
    """||grad v||^2 over I x Omega from element gradients (independent of A)."""
    space = v.space
    grads = fespace.local_gradients(space.element_points)
    total = 0.0
    for m in range(v.partition.M):
        corners = space.nodal_values(v.frames[m])[space.mesh.triangles]
        grad = np.einsum("ti,tid->td", corners, grads)
        total += v.partition.steps[m] * float(np.sum(space.mesh.areas * (grad**2).sum(axis=1)))
    return total


def eval_along_curve(v: Trajectory, curve_points: np.ndarray, trace: Optional[CsrMatrix] = None) -> np.ndarray:
    """v_m(gamma_k,m) for every interval m."""
    if len(curve_points) != v.partition.M:
        raise invalid_argument("curve must have one point per interval")
    if trace is None:
        trace = curve_trace_operator(v.space, curve_points)
    return np.asarray(trace.multiply(v.frames).sum(axis=1)).ravel()


def step_residuals(
    u: Trajectory, curve_points: np.ndarray, q: Union[Control, np.ndarray]
) -> np.ndarray:
    """||(M + k_m A) U_m - M U_{m-1} - k_m q_m L_m|| / ||rhs_m|| per interval."""
    space, partition = u.space, u.partition
    values = _control_values(q)
    trace = curve_trace_operator(space, curve_points)
    residuals = np.zeros(partition.M)
    previous = np.zeros(space.n_dofs)
    for m in range(partition.M):
        k = partition.steps[m]
        rhs = space.mass @ previous + k * values[m] * _csr_row(trace, m)
        lhs = space.mass @ u.frames[m] + k * (space.stiffness @ u.frames[m])
        scale = np.linalg.norm(rhs)
        residuals[m] = np.linalg.norm(lhs - rhs) / scale if scale > 0 else np.linalg.norm(lhs)
        previous = u.frames[m]
    return residuals


def solve_regularized_dual(
    space: FeSpace, partition: TimePartition, v_kh: Trajectory, curve_points: np.ndarray
) -> Trajectory:
    """g_kh: B(phi, g) = (v_kh(t, gamma_k(t)) delta~, phi) over I x Omega."""
    along = eval_along_curve(v_kh, curve_points)
    loads = [fespace.delta_load(space, fespace.smoothed_delta(space, p)) for p in curve_points]
    steps = partition.steps
    return _backward_sweep(space, partition, lambda m: (steps[m] * along[m]) * loads[m])


def regularized_dual_step_residual(
    g_kh: Trajectory, v_kh: Trajectory, curve_points: np.ndarray
) -> float:
    """max_m of the relative residual of -k_m Lap_h g_m - [g]_m = k_m v_m P_h delta~_m."""
    space, partition = g_kh.space, g_kh.partition
    along = eval_along_curve(v_kh, curve_points)
    jumps = g_kh.jumps()
    worst = 0.0
    for m in range(partition.M):
        k = partition.steps[m]
        lap = fespace.discrete_laplacian(space, g_kh.frame(m)).coeffs
        delta = fespace.smoothed_delta(space, curve_points[m])
        projected = cg_solve(
            space.mass, fespace.delta_load(space, delta), rel_tol=fespace.PROJECTION_REL_TOL
        ).x
        rhs = k * along[m] * projected
        residual = -k * lap - jumps[m] - rhs
        scale = max(np.linalg.norm(rhs), np.linalg.norm(jumps[m]))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(residual) / scale))
    return worst


@dataclass(frozen=True)
class ErrorNorms:
    l2l2: float
    l2l1: float
    curve_l2: float


def error_norms(
    v_exact: Union[SpaceTimeField, Trajectory],
    v_kh: Trajectory,
    curve_points: np.ndarray,
    space: Optional[FeSpace] = None,
    partition: Optional[TimePartition] = None,
) -> ErrorNorms:
    """L2(L2), L2(L1) and along-curve L2 errors of v_kh.

    Integration uses Gauss-2 per interval of `partition` and the order-4 rule
    on the cells of `space`; both default to those of v_kh and may be nested
    refinements of them (used for fine-grid reference comparisons).
    """
    space = v_kh.space if space is None else space
    partition = v_kh.partition if partition is None else partition
    points, weights, _ = space.quadrature
    flat = points.reshape(-1, 2)
    times, tweights = partition.gauss_points()
    mids = 0.5 * (partition.nodes[:-1] + partition.nodes[1:])
    coarse = v_kh.partition.interval_of(mids)

    if v_kh.space is space:
        approx = lambda m: space.at_quadrature(v_kh.frames[m])  # noqa: E731
    else:
        to_points = fespace.evaluation_matrix(v_kh.space, flat)
        approx = lambda m: (to_points @ v_kh.frames[m]).reshape(weights.shape)  # noqa: E731
    approx_curve = eval_along_curve(v_kh, curve_points)

    if isinstance(v_exact, Trajectory):
        ref = v_exact
        if ref.space is space:
            exact_at = lambda t: space.at_quadrature(ref.frames[int(ref.partition.interval_of(t))])  # noqa: E731
        else:
            ref_points = fespace.evaluation_matrix(ref.space, flat)
            exact_at = lambda t: (  # noqa: E731
                ref_points @ ref.frames[int(ref.partition.interval_of(t))]
            ).reshape(weights.shape)
        ref_curve = fespace.evaluation_matrix(ref.space, curve_points)
        exact_curve = lambda t, m: float(  # noqa: E731
            _csr_row(ref_curve, m) @ ref.frames[int(ref.partition.interval_of(t))]
        )
    else:
        exact_at = lambda t: np.broadcast_to(  # noqa: E731
            v_exact(t, points[..., 0], points[..., 1]), weights.shape
        )
        exact_curve = lambda t, m: float(  # noqa: E731
            np.asarray(v_exact(t, curve_points[m, 0], curve_points[m, 1]))
        )

    l2_sq = l1_sq = curve_sq = 0.0
    for j in range(partition.M):
        m = int(coarse[j])
        values = approx(m)
        for t, tw in zip(times[j], tweights[j]):
            diff = exact_at(t) - values
            l2_sq += tw * float(np.sum(weights * diff**2))
            l1_sq += tw * float(np.sum(weights * np.abs(diff))) ** 2
            curve_sq += tw * (exact_curve(t, m) - approx_curve[m]) ** 2
    return ErrorNorms(l2l2=float(np.sqrt(l2_sq)), l2l1=float(np.sqrt(l1_sq)), curve_l2=float(np.sqrt(curve_sq)))


def dump_trajectory(v: Trajectory, path: Union[str, Path]) -> None:
    """Per-interval blocks "frame m t_m" followed by the coefficients (m 1-based)."""
    lines = []
    for m in range(v.partition.M):
        lines.append(f"frame {m + 1} {float(v.partition.nodes[m + 1])!r}")
        lines.append(" ".join(repr(float(c)) for c in v.frames[m]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
