"""Tests for the reduced control problem and its two solvers."""

import itertools
import math

import numpy as np
import pytest

from cmd.curvectrl import mesh, ocp
from cmd.curvectrl.exceptions import InvalidArgument, Nonconvergence
from cmd.curvectrl.expression import parse_expression
from cmd.curvectrl.fespace import FeSpace
from cmd.curvectrl.timeline import CircleCurve, Control, FixedCurve, discretize_curve, uniform_partition

UHAT = "3*cos(pi*t)"
ALPHA, QA, QB = 0.05, -2.0, 2.0


def _tiny_problem(alpha=ALPHA, qa=QA, qb=QB, u_hat=UHAT):
    space = FeSpace(mesh.build_uniform_square(2))
    partition = uniform_partition(1.0, 3)
    points = discretize_curve(FixedCurve(), partition)
    expr = parse_expression(u_hat) if u_hat is not None else None
    return ocp.OcpProblem(space, partition, points, alpha, qa, qb, expr)


def _dense_oracle(alpha=ALPHA, qa=QA, qb=QB):
    """Scalar recurrences for the single center DOF and 3^3 active-set enumeration."""
    k, m0, a0, M = 1.0 / 3.0, 1.0 / 8.0, 4.0, 3
    G = np.zeros((M, M))
    for j in range(M):
        u = 0.0
        for m in range(M):
            u = (m0 * u + k * (m == j)) / (m0 + k * a0)
            G[m, j] = u
    nodes = np.arange(M + 1) / M
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    offset = k / (2.0 * math.sqrt(3.0))
    b = np.array(
        [0.25 * 0.5 * k * (3 * math.cos(math.pi * (c - offset)) + 3 * math.cos(math.pi * (c + offset))) for c in mid]
    )
    hessian = G.T @ (k * m0 * G) + alpha * k * np.eye(M)
    linear = G.T @ b

    best, best_value = None, math.inf
    for pattern in itertools.product("lfu", repeat=M):
        q = np.array([qa if s == "l" else qb if s == "u" else 0.0 for s in pattern])
        free = np.array([s == "f" for s in pattern])
        if free.any():
            rhs = linear[free] - hessian[np.ix_(free, ~free)] @ q[~free]
            q[free] = np.linalg.solve(hessian[np.ix_(free, free)], rhs)
        if np.any(q < qa - 1e-12) or np.any(q > qb + 1e-12):
            continue
        value = 0.5 * q @ hessian @ q - linear @ q
        if value < best_value:
            best, best_value = q, value
    return best


@pytest.fixture
def tiny():
    return _tiny_problem()


def test_problem_validation(tiny):
    with pytest.raises(InvalidArgument):
        _tiny_problem(alpha=0.0)
    with pytest.raises(InvalidArgument):
        _tiny_problem(qa=1.0, qb=0.0)
    with pytest.raises(InvalidArgument):
        ocp.OcpProblem(tiny.space, tiny.partition, tiny.curve_points[:2], 1.0)


def test_pdas_matches_dense_oracle(tiny):
    expected = _dense_oracle()
    control, diagnostics = ocp.solve_pdas(tiny, tol=1e-10)
    assert diagnostics.converged
    np.testing.assert_allclose(control.values, expected, atol=1e-6)
    assert ocp.optimality_residual(tiny, control) <= 1e-8


def test_projected_gradient_matches_dense_oracle(tiny):
    expected = _dense_oracle()
    control, diagnostics = ocp.solve_projected_gradient(tiny, tol=1e-10)
    assert diagnostics.converged
    np.testing.assert_allclose(control.values, expected, atol=1e-6)
    assert ocp.optimality_residual(tiny, control) <= 1e-8


def test_oracle_has_active_bounds():
    """The tiny instance exercises both the free and the bound-constrained case."""
    q = _dense_oracle()
    assert np.any(np.isclose(q, QB)) or np.any(np.isclose(q, QA))
    assert np.any((q > QA + 1e-9) & (q < QB - 1e-9))


def test_reduced_value_matches_quadratic_model(tiny):
    """j(q) - j(0) is the dense quadratic model evaluated at q."""
    rng = np.random.default_rng(7)
    q = rng.uniform(-1.0, 1.0, 3)
    k, m0, a0 = 1.0 / 3.0, 1.0 / 8.0, 4.0
    u, tracking = 0.0, 0.0
    for m in range(3):
        u = (m0 * u + k * q[m]) / (m0 + k * a0)
        tracking += 0.5 * k * m0 * u * u - u * float(tiny.desired_load(m)[0])
    expected = tracking + 0.5 * ALPHA * k * float(q @ q)
    assert ocp.reduced_value(tiny, q) - ocp.reduced_value(tiny, np.zeros(3)) == pytest.approx(expected, rel=1e-10)


def test_gradient_matches_central_differences(tiny):
    rng = np.random.default_rng(3)
    q, dq = rng.standard_normal(3), rng.standard_normal(3)
    eps = 1e-4
    fd = (ocp.reduced_value(tiny, q + eps * dq) - ocp.reduced_value(tiny, q - eps * dq)) / (2 * eps)
    assert tiny.inner(ocp.reduced_gradient(tiny, q), dq) == pytest.approx(fd, rel=1e-6)


def test_hessian_is_self_adjoint():
    space = FeSpace(mesh.build_uniform_square(5))
    partition = uniform_partition(1.0, 6)
    problem = ocp.OcpProblem(space, partition, discretize_curve(CircleCurve(), partition), 0.3)
    rng = np.random.default_rng(11)
    p, r = rng.standard_normal(6), rng.standard_normal(6)
    assert problem.inner(problem.hessian_apply(p), r) == pytest.approx(
        problem.inner(p, problem.hessian_apply(r)), rel=1e-9
    )


def test_zero_desired_state_gives_zero_control():
    problem = _tiny_problem(u_hat=None, qa=-1.0, qb=1.0)
    control, diagnostics = ocp.solve_pdas(problem)
    assert diagnostics.outer_iterations == 1
    np.testing.assert_array_equal(control.values, np.zeros(3))


def test_singleton_bounds_pin_the_control():
    problem = _tiny_problem(qa=0.3, qb=0.3)
    control, diagnostics = ocp.solve_pdas(problem)
    assert diagnostics.outer_iterations == 1
    np.testing.assert_allclose(control.values, [0.3, 0.3, 0.3])


def test_infeasible_initial_control_rejected(tiny):
    with pytest.raises(InvalidArgument):
        ocp.solve_pdas(tiny, q0=np.array([5.0, 0.0, 0.0]))
    with pytest.raises(InvalidArgument):
        ocp.solve_projected_gradient(tiny, q0=Control(tiny.partition, [0.0, 0.0, -3.0]))


def test_projected_gradient_descends_monotonically(tiny):
    _, diagnostics = ocp.solve_projected_gradient(tiny, tol=1e-10)
    history = diagnostics.objective
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(history, history[1:]))


def test_projected_gradient_nonconvergence_carries_best_iterate(tiny):
    with pytest.raises(Nonconvergence) as info:
        ocp.solve_projected_gradient(tiny, tol=1e-14, max_iter=1)
    assert isinstance(info.value.best, Control)
    assert info.value.best.is_feasible()
    assert info.value.diagnostics["solver"] == "projected_gradient"


def test_project_admissible_clamps(tiny):
    projected = ocp.project_admissible(tiny, np.array([-5.0, 0.5, 5.0]))
    np.testing.assert_array_equal(projected.values, [QA, 0.5, QB])


def test_solvers_agree_on_moving_curve():
    space = FeSpace(mesh.build_uniform_square(4))
    partition = uniform_partition(1.0, 6)
    points = discretize_curve(CircleCurve(), partition)
    u_hat = parse_expression("sin(pi*x)*sin(pi*y)*sin(2*pi*t)")
    problem = ocp.OcpProblem(space, partition, points, 0.01, -0.3, 0.3, u_hat)
    pdas, _ = ocp.solve_pdas(problem, tol=1e-10)
    pg, _ = ocp.solve_projected_gradient(problem, tol=1e-10, max_iter=2000)
    np.testing.assert_allclose(pdas.values, pg.values, atol=1e-6)
    assert ocp.optimality_residual(problem, pdas) <= 1e-8


def test_diagnostics_serialise():
    d = ocp.SolverDiagnostics(solver="pdas", outer_iterations=2, residual=1e-9, converged=True)
    assert d.to_dict()["outer_iterations"] == 2


def test_pdas_with_infinite_bounds_is_unconstrained_solve():
    space = FeSpace(mesh.build_uniform_square(4))
    partition = uniform_partition(1.0, 5)
    points = discretize_curve(CircleCurve(), partition)
    u_hat = parse_expression("sin(pi*x)*sin(pi*y)*cos(pi*t)")
    problem = ocp.OcpProblem(space, partition, points, 0.1, -math.inf, math.inf, u_hat)
    hessian = np.column_stack([problem.hessian_apply(e) for e in np.eye(partition.M)])
    expected = np.linalg.solve(hessian, -problem.data_trace)
    control, diagnostics = ocp.solve_pdas(problem, tol=1e-10)
    assert diagnostics.converged
    assert np.all(np.isfinite(control.values))
    np.testing.assert_allclose(control.values, expected, rtol=1e-7, atol=1e-9)
    assert ocp.optimality_residual(problem, control) <= 1e-8
