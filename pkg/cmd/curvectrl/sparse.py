"""CSR storage, matrix-vector products and preconditioned conjugate gradients."""

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import LinearOperator

from .exceptions import dimension_mismatch, invalid_argument, solver_failure

logger = structlog.get_logger()

CsrMatrix = sp.csr_matrix
Operator = Union[sp.csr_matrix, LinearOperator]

DEFAULT_REL_TOL = 1e-10


@dataclass(frozen=True)
class CgResult:
    """Solution of cg_solve with the iteration count and final relative residual."""

    x: np.ndarray
    iterations: int
    residual: float


def csr_from_triplets(rows, cols, values, shape) -> CsrMatrix:
    """Assemble a CSR matrix, summing duplicate (row, col) entries."""
    matrix = sp.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def check_csr(matrix: CsrMatrix) -> None:
    """Validate the structural CSR invariants.

    Raises:
        InvalidArgument: if row_ptr or col_idx are malformed
    """
    row_ptr, col_idx = matrix.indptr, matrix.indices
    n_rows = matrix.shape[0]
    if len(row_ptr) != n_rows + 1 or row_ptr[0] != 0 or row_ptr[-1] != matrix.nnz:
        raise invalid_argument("row_ptr must start at 0 and end at nnz")
    if np.any(np.diff(row_ptr) < 0):
        raise invalid_argument("row_ptr must be nondecreasing")
    for i in range(n_rows):
        cols = col_idx[row_ptr[i] : row_ptr[i + 1]]
        if np.any(np.diff(cols) <= 0):
            raise invalid_argument(f"col_idx not strictly increasing in row {i}")


def is_symmetric(matrix: CsrMatrix, tol: float = 1e-14) -> bool:
    """True if |a_ij - a_ji| <= tol * max|a| for all entries."""
    if matrix.shape[0] != matrix.shape[1]:
        return False
    scale = max(abs(matrix).max(), 1.0) if matrix.nnz else 1.0
    diff = matrix - matrix.T
    return diff.nnz == 0 or abs(diff).max() <= tol * scale


def spmv(matrix: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """y = A x, rows summed in column-index order."""
    x = np.asarray(x, dtype=float)
    if x.shape != (matrix.shape[1],):
        raise dimension_mismatch(matrix.shape[1], x.shape[0] if x.ndim else 0)
    return matrix @ x


def jacobi(matrix: CsrMatrix) -> np.ndarray:
    """Inverse diagonal of an SPD matrix."""
    diag = matrix.diagonal()
    if np.any(diag <= 0.0):
        raise invalid_argument("jacobi preconditioner needs a positive diagonal")
    return 1.0 / diag


def cg_solve(
    matrix: Operator,
    b: np.ndarray,
    rel_tol: float = DEFAULT_REL_TOL,
    max_iter: Optional[int] = None,
    precond: Literal["none", "jacobi"] = "jacobi",
    x0: Optional[np.ndarray] = None,
    inv_diag: Optional[np.ndarray] = None,
) -> CgResult:
    """Preconditioned conjugate gradients for SPD systems.

    Args:
        matrix: CSR matrix, or any operator supporting ``@`` when precond="none"
        b: right-hand side
        rel_tol: stop once ||b - A x|| <= rel_tol * ||b||
        max_iter: iteration cap, 10 * n by default
        precond: "jacobi" scales residuals by the inverse diagonal
        x0: initial guess, zero by default
        inv_diag: precomputed inverse diagonal for repeated solves

    Returns:
        CgResult with the solution, iteration count and relative residual

    Raises:
        SolverFailure: if the tolerance is not met within max_iter iterations
    """
    b = np.asarray(b, dtype=float)
    n = matrix.shape[0]
    if b.shape != (n,):
        raise dimension_mismatch(n, b.shape[0] if b.ndim else 0)
    if max_iter is None:
        max_iter = 10 * max(n, 1)

    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return CgResult(x=np.zeros(n), iterations=0, residual=0.0)

    if precond == "jacobi":
        if inv_diag is None:
            if not sp.issparse(matrix):
                raise invalid_argument("jacobi preconditioning needs an assembled sparse matrix")
            inv_diag = jacobi(matrix)
        apply_precond = lambda r: inv_diag * r  # noqa: E731
    elif precond == "none":
        apply_precond = lambda r: r  # noqa: E731
    else:
        raise invalid_argument(f"unknown preconditioner {precond!r}")

    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - matrix @ x

    target = rel_tol * norm_b
    norm_r = np.linalg.norm(r)
    it = 0
    while norm_r > target and it < max_iter:
        z = apply_precond(r)
        p = z.copy()
        gamma = r @ z
        while it < max_iter:
            it += 1
            ap = matrix @ p
            alpha = gamma / (p @ ap)
            x += alpha * p
            r -= alpha * ap
            if np.linalg.norm(r) <= target:
                break
            z = apply_precond(r)
            gamma_old = gamma
            gamma = r @ z
            p = z + (gamma / gamma_old) * p
        # The recursive residual drifts; restart from the true one if needed.
        r = b - matrix @ x
        norm_r = np.linalg.norm(r)

    residual = norm_r / norm_b
    if norm_r > target:
        logger.warning("cg_not_converged", iterations=it, residual=residual)
        raise solver_failure(residual, it)
    logger.debug("cg_converged", iterations=it, residual=residual)
    return CgResult(x=x, iterations=it, residual=residual)


def dump_coordinate(matrix: CsrMatrix, path: Union[str, Path]) -> None:
    """Write the matrix as "i j value" lines for debugging."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [
        f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}" for k in order
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
