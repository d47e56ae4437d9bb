"""Single solves, optimization runs and convergence studies.

Every runner writes into an output directory:

- the run's own CSV (solution.csv, control.csv or eoc.csv)
- config.yaml, the effective configuration in normal form
- metadata.json, the derived run parameters

Numbers are written with 17 significant digits so identical configurations
give byte-identical files when timings are disabled.
"""

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import structlog

from . import config as configlib
from . import heat, mesh, ocp
from .exceptions import config_error
from .expression import Expression, parse_expression
from .fespace import FeSpace
from .heat import ErrorNorms, Trajectory
from .models import MODE_CONTROL, MODE_FORWARD, MODE_STATE, SOLVER_PDAS, StudyConfig
from .timeline import TimePartition, discretize_curve, pi_k, uniform_partition

logger = structlog.get_logger()

EOC_COLUMNS = [
    "level",
    "h",
    "k",
    "M",
    "n_dofs",
    "err_control",
    "err_state_l2l2",
    "err_state_l2l1",
    "err_curve",
    "eoc_control",
    "eoc_state",
    "eoc_state_l2l1",
    "eoc_curve",
    "wall_ms",
]


@dataclass(frozen=True, eq=False)
class LevelSetup:
    level: int
    space: FeSpace
    partition: TimePartition
    curve_points: np.ndarray

    @property
    def h(self) -> float:
        return self.space.mesh.h

    @property
    def n_dofs(self) -> int:
        return self.space.n_dofs


@dataclass(frozen=True, eq=False)
class LevelResult:
    setup: LevelSetup
    state: Trajectory
    control: Optional[np.ndarray]
    wall_ms: float
    diagnostics: Optional[ocp.SolverDiagnostics] = None


def build_level(config: StudyConfig, level: int) -> LevelSetup:
    """Uniform mesh, time partition and discrete curve of a refinement level."""
    space = FeSpace(mesh.build_uniform_square(config.level_size(level)))
    partition = uniform_partition(config.time.T, config.level_steps(level))
    points = discretize_curve(config.curve, partition, config.domain.margin)
    return LevelSetup(level, space, partition, points)


def _expression(src: Optional[str], variables=("t", "x", "y")) -> Optional[Expression]:
    return None if src is None else parse_expression(src, variables)


def build_problem(config: StudyConfig, setup: LevelSetup) -> ocp.OcpProblem:
    return ocp.OcpProblem(
        space=setup.space,
        partition=setup.partition,
        curve_points=setup.curve_points,
        alpha=config.control.alpha,
        qa=config.control.qa,
        qb=config.control.qb,
        u_hat=_expression(config.data.uhat_expr),
    )


def fixed_control(config: StudyConfig, partition: TimePartition) -> np.ndarray:
    """pi_k of control.q_expr, or zero when no control is configured."""
    q = _expression(config.control.q_expr, variables=("t",))
    if q is None:
        return np.zeros(partition.M)
    return pi_k(partition, lambda t: float(q.evaluate(t=t))).astype(float)


def solve_control(config: StudyConfig, problem: ocp.OcpProblem):
    """Run the configured optimizer; returns (Control, SolverDiagnostics)."""
    solver = config.solver
    if solver.method == SOLVER_PDAS:
        return ocp.solve_pdas(problem, tol=solver.tol, max_outer=solver.max_outer)
    return ocp.solve_projected_gradient(problem, tol=solver.tol, max_iter=solver.max_iter)


def compute_rates(h_list: Sequence[float], err_list: Sequence[float]) -> List[Optional[float]]:
    """rate_l = log(e_{l-1}/e_l) / log(h_{l-1}/h_l); None where undefined."""
    rates: List[Optional[float]] = [None]
    for j in range(1, len(h_list)):
        prev, cur = err_list[j - 1], err_list[j]
        if prev > 0 and cur > 0 and math.isfinite(prev) and math.isfinite(cur):
            rates.append(math.log(prev / cur) / math.log(h_list[j - 1] / h_list[j]))
        else:
            rates.append(None)
    return rates


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out(config: StudyConfig, out: Union[str, Path, None]) -> Path:
    out_dir = Path(out or config.output.dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise config_error(f"cannot create output directory {out_dir}: {exc}") from exc
    configlib.write_config(config, out_dir / "config.yaml")
    return out_dir


def _metadata(config: StudyConfig, command: str, **extra: Any) -> Dict[str, Any]:
    payload = {
        "command": command,
        "defaults_origin": "constructed",
        "note": (
            "Curves, desired states, alpha, bounds, mesh sizes and couplings "
            "are constructed study parameters, not published experiment settings."
        ),
        "seed": config.study.seed,
        "mode": config.study.mode,
        "c_gamma": config.curve.c_gamma(config.time.T),
    }
    payload.update(extra)
    return payload


def _elapsed_ms(config: StudyConfig, start: float) -> float:
    if not config.output.timings:
        return 0.0
    return round((time.perf_counter() - start) * 1000.0, 3)


def run_solve(config: StudyConfig, out: Union[str, Path, None] = None) -> Path:
    """Forward solve on level 0 with control.q_expr as source and data.f_expr as field."""
    out_dir = _prepare_out(config, out)
    setup = build_level(config, 0)
    q = fixed_control(config, setup.partition)
    state = heat.solve_forward_source(setup.space, setup.partition, setup.curve_points, q)
    f = _expression(config.data.f_expr)
    if f is not None:
        field = heat.solve_forward_field(setup.space, setup.partition, f)
        state = Trajectory(setup.space, setup.partition, state.frames + field.frames)

    columns = ["m", "t_m"]
    if config.control.q_expr is not None:
        columns.append("q_m")
    columns += ["u_at_curve", "u_norm_m"]
    along = heat.eval_along_curve(state, setup.curve_points)
    norms = state.norms_m()
    z_along = None
    u_hat = _expression(config.data.uhat_expr)
    if u_hat is not None:
        z = heat.solve_adjoint(setup.space, setup.partition, state, u_hat=u_hat)
        z_along = heat.eval_along_curve(z, setup.curve_points)
        columns.append("z_at_curve")

    rows = []
    for m in range(setup.partition.M):
        row: List[Any] = [m + 1, setup.partition.nodes[m + 1]]
        if config.control.q_expr is not None:
            row.append(q[m])
        row += [along[m], norms[m]]
        if z_along is not None:
            row.append(z_along[m])
        rows.append(row)
    write_csv(out_dir / "solution.csv", columns, rows)
    _write_json(out_dir / "metadata.json", _metadata(config, "solve", n=config.level_size(0), M=setup.partition.M))
    logger.info("solve_written", out=str(out_dir), steps=setup.partition.M, n_dofs=setup.n_dofs)
    return out_dir


def run_optimize(config: StudyConfig, out: Union[str, Path, None] = None) -> Path:
    """Solve the control problem on level 0; writes control.csv and diagnostics.json."""
    out_dir = _prepare_out(config, out)
    setup = build_level(config, 0)
    problem = build_problem(config, setup)
    start = time.perf_counter()
    control, diagnostics = solve_control(config, problem)
    trace = problem.adjoint_trace(control)
    gradient = config.control.alpha * control.values + trace
    residual = ocp.optimality_residual(problem, control)

    rows = [
        [m + 1, setup.partition.nodes[m + 1], control.values[m], trace[m], gradient[m]]
        for m in range(setup.partition.M)
    ]
    write_csv(out_dir / "control.csv", ["m", "t_m", "q_m", "z_at_curve", "gradient"], rows)
    payload = diagnostics.to_dict()
    payload["optimality_residual"] = residual
    payload["wall_ms"] = _elapsed_ms(config, start)
    _write_json(out_dir / "diagnostics.json", payload)
    _write_json(out_dir / "metadata.json", _metadata(config, "optimize", n=config.level_size(0), M=setup.partition.M))
    logger.info(
        "optimize_written",
        out=str(out_dir),
        solver=diagnostics.solver,
        outer=diagnostics.outer_iterations,
        optimality_residual=residual,
    )
    return out_dir


def solve_level(config: StudyConfig, level: int) -> LevelResult:
    """Discrete solution of the configured mode on one level."""
    start = time.perf_counter()
    setup = build_level(config, level)
    diagnostics = None
    control = None
    if config.study.mode == MODE_CONTROL:
        problem = build_problem(config, setup)
        solution, diagnostics = solve_control(config, problem)
        control = solution.values
        state = problem.state(solution)
    elif config.study.mode == MODE_STATE:
        control = fixed_control(config, setup.partition)
        state = heat.solve_forward_source(setup.space, setup.partition, setup.curve_points, control)
    else:
        f = _expression(config.data.f_expr)
        state = heat.solve_forward_field(setup.space, setup.partition, f)
    wall_ms = _elapsed_ms(config, start)
    logger.info("study_level_solved", level=level, n_dofs=setup.n_dofs, M=setup.partition.M, wall_ms=wall_ms)
    return LevelResult(setup, state, control, wall_ms, diagnostics)


def control_error(coarse: LevelResult, fine: LevelResult) -> float:
    """||q_fine - q_coarse||_L2(I), exact on the finer of two nested grids."""
    if coarse.control is None or fine.control is None:
        return math.nan
    partition = fine.setup.partition
    mids = 0.5 * (partition.nodes[:-1] + partition.nodes[1:])
    idx = coarse.setup.partition.interval_of(mids)
    diff = fine.control - coarse.control[idx]
    return math.sqrt(float(np.sum(partition.steps * diff * diff)))


def state_errors(config: StudyConfig, result: LevelResult, reference: Optional[LevelResult]) -> ErrorNorms:
    setup = result.setup
    exact = _expression(config.data.exact_expr)
    if config.study.mode == MODE_FORWARD and exact is not None:
        return heat.error_norms(exact, result.state, setup.curve_points)
    return heat.error_norms(
        reference.state,
        result.state,
        setup.curve_points,
        space=reference.setup.space,
        partition=reference.setup.partition,
    )


def _needs_reference(config: StudyConfig) -> bool:
    return not (config.study.mode == MODE_FORWARD and config.data.exact_expr is not None)


def run_study(config: StudyConfig, out: Union[str, Path, None] = None) -> Path:
    """Convergence study over config.domain.levels levels; writes eoc.csv.

    Raises:
        ConfigError: fewer than two levels
        Nonconvergence: an optimizer failed on some level
    """
    if config.domain.levels < 2:
        raise config_error("a convergence study needs domain.levels >= 2")
    out_dir = _prepare_out(config, out)
    levels = list(range(config.domain.levels))
    if _needs_reference(config):
        levels.append(config.reference_level)

    workers = min(configlib.threads(), len(levels))
    logger.info("study_started", mode=config.study.mode, levels=config.domain.levels, workers=workers)
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda level: solve_level(config, level), levels))
        else:
            results = [solve_level(config, level) for level in levels]
    except Exception as exc:
        logger.error("study_level_failed", error=str(exc))
        raise

    reference = results[-1] if _needs_reference(config) else None
    study_results = results[: config.domain.levels]

    errors = []
    for result in study_results:
        norms = state_errors(config, result, reference)
        err_control = control_error(result, reference) if reference is not None else math.nan
        errors.append((err_control, norms))
        logger.info(
            "study_level_errors",
            level=result.setup.level,
            err_control=err_control,
            err_state_l2l2=norms.l2l2,
            err_state_l2l1=norms.l2l1,
        )

    h = [r.setup.h for r in study_results]
    eoc_control = compute_rates(h, [e[0] for e in errors])
    eoc_state = compute_rates(h, [e[1].l2l2 for e in errors])
    eoc_l2l1 = compute_rates(h, [e[1].l2l1 for e in errors])
    eoc_curve = compute_rates(h, [e[1].curve_l2 for e in errors])

    rows = []
    for j, result in enumerate(study_results):
        setup = result.setup
        err_control, norms = errors[j]
        rows.append(
            [
                setup.level,
                setup.h,
                setup.partition.k,
                setup.partition.M,
                setup.n_dofs,
                err_control,
                norms.l2l2,
                norms.l2l1,
                norms.curve_l2,
                eoc_control[j],
                eoc_state[j],
                eoc_l2l1[j],
                eoc_curve[j],
                result.wall_ms,
            ]
        )
    write_csv(out_dir / "eoc.csv", EOC_COLUMNS, rows)

    extra: Dict[str, Any] = {
        "levels": [
            {"level": r.setup.level, "n": config.level_size(r.setup.level), "M": r.setup.partition.M}
            for r in study_results
        ],
        "reference_level": config.reference_level if reference is not None else None,
    }
    if config.study.mode == MODE_CONTROL:
        extra["solver"] = [r.diagnostics.to_dict() for r in results if r.diagnostics is not None]
    _write_json(out_dir / "metadata.json", _metadata(config, "study", **extra))
    logger.info("study_written", out=str(out_dir), rows=len(rows))
    return out_dir
