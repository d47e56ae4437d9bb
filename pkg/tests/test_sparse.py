"""Tests for CSR helpers and the conjugate-gradient solver."""

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from cmd.curvectrl import sparse
from cmd.curvectrl.exceptions import InvalidArgument, SolverFailure


def _laplacian_1d(n: int) -> sparse.CsrMatrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_csr_from_triplets_sums_duplicates():
    matrix = sparse.csr_from_triplets([0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0], (2, 2))
    assert matrix[0, 0] == 3.0
    assert matrix.nnz == 2
    sparse.check_csr(matrix)


def test_check_csr_rejects_unsorted_columns():
    matrix = sp.csr_matrix(
        (np.array([1.0, 2.0]), np.array([1, 0]), np.array([0, 2, 2])), shape=(2, 2)
    )
    with pytest.raises(InvalidArgument):
        sparse.check_csr(matrix)


def test_is_symmetric():
    assert sparse.is_symmetric(_laplacian_1d(5))
    skew = sparse.csr_from_triplets([0], [1], [1.0], (2, 2))
    assert not sparse.is_symmetric(skew)


def test_spmv_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        sparse.spmv(_laplacian_1d(4), np.ones(3))


@pytest.mark.parametrize("precond", ["jacobi", "none"])
def test_cg_solves_spd_system(precond):
    matrix = _laplacian_1d(30)
    x_true = np.linspace(-1.0, 1.0, 30)
    b = matrix @ x_true
    result = sparse.cg_solve(matrix, b, rel_tol=1e-12, precond=precond)
    np.testing.assert_allclose(result.x, x_true, atol=1e-9)
    assert result.residual <= 1e-12
    assert 0 < result.iterations <= 300


def test_cg_zero_rhs_returns_zero():
    result = sparse.cg_solve(_laplacian_1d(5), np.zeros(5))
    assert result.iterations == 0
    np.testing.assert_array_equal(result.x, np.zeros(5))


def test_cg_warm_start_at_solution_takes_no_iterations():
    matrix = _laplacian_1d(10)
    x_true = np.arange(10.0)
    result = sparse.cg_solve(matrix, matrix @ x_true, x0=x_true)
    assert result.iterations == 0


def test_cg_accepts_linear_operator():
    matrix = _laplacian_1d(12)
    operator = LinearOperator(matrix.shape, matvec=lambda v: matrix @ v, dtype=float)
    b = np.ones(12)
    result = sparse.cg_solve(operator, b, precond="none", rel_tol=1e-12)
    np.testing.assert_allclose(matrix @ result.x, b, atol=1e-10)


def test_cg_reports_failure_when_iterations_run_out():
    with pytest.raises(SolverFailure) as info:
        sparse.cg_solve(_laplacian_1d(50), np.ones(50), rel_tol=1e-14, max_iter=2)
    assert info.value.iterations == 2
    assert info.value.residual > 1e-14


def test_jacobi_requires_positive_diagonal():
    with pytest.raises(InvalidArgument):
        sparse.jacobi(sparse.csr_from_triplets([0, 1], [0, 1], [1.0, -1.0], (2, 2)))


def test_unknown_preconditioner():
    with pytest.raises(InvalidArgument):
        sparse.cg_solve(_laplacian_1d(3), np.ones(3), precond="ilu")


def test_dump_coordinate(tmp_path):
    path = tmp_path / "a.txt"
    sparse.dump_coordinate(sparse.csr_from_triplets([1, 0], [0, 1], [2.0, 3.0], (2, 2)), path)
    assert path.read_text() == "0 1 3.0\n1 0 2.0\n"


def test_jacobi_needs_assembled_matrix():
    matrix = _laplacian_1d(6)
    operator = LinearOperator(matrix.shape, matvec=lambda v: matrix @ v, dtype=float)
    with pytest.raises(InvalidArgument):
        sparse.cg_solve(operator, np.ones(6), precond="jacobi")
