"""P1 finite elements with homogeneous Dirichlet conditions on a Mesh.

Only interior vertices carry degrees of freedom, so the mass matrix M and
stiffness matrix A assembled here are symmetric positive definite. Element
integrals of P1 x P1 and grad P1 x grad P1 are exact; general integrands use
a symmetric triangle quadrature of order 1, 2 or 4.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Tuple

import numpy as np
import structlog

from . import mesh as meshlib
from .exceptions import invalid_argument
from .mesh import Mesh
from .sparse import CsrMatrix, cg_solve, csr_from_triplets

logger = structlog.get_logger()

SpaceField = Callable[[np.ndarray, np.ndarray], np.ndarray]
GradientField = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]

PROJECTION_REL_TOL = 1e-12

_A1, _W1 = 0.44594849091596489, 0.22338158967801147
_A2, _W2 = 0.091576213509770743, 0.10995174365532187

# Barycentric points and weights (summing to 1) per quadrature order.
QUADRATURE_RULES: Dict[int, Tuple[np.ndarray, np.ndarray]] = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3),
    ),
    4: (
        np.array(
            [
                [1 - 2 * _A1, _A1, _A1],
                [_A1, 1 - 2 * _A1, _A1],
                [_A1, _A1, 1 - 2 * _A1],
                [1 - 2 * _A2, _A2, _A2],
                [_A2, 1 - 2 * _A2, _A2],
                [_A2, _A2, 1 - 2 * _A2],
            ]
        ),
        np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
    ),
}

_MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def quadrature_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    if order not in QUADRATURE_RULES:
        raise invalid_argument(f"no quadrature rule of order {order}")
    return QUADRATURE_RULES[order]


def local_mass(p: np.ndarray) -> np.ndarray:
    """Element mass matrix of the triangle(s) with vertices p (..., 3, 2)."""
    area = _areas(p)
    return area[..., None, None] * _MASS_TEMPLATE


def local_gradients(p: np.ndarray) -> np.ndarray:
    """Constant gradients of the three barycentric hats, shape (..., 3, 2)."""
    x, y = p[..., 0], p[..., 1]
    twice_area = 2.0 * _areas(p)
    gx = np.stack([y[..., 1] - y[..., 2], y[..., 2] - y[..., 0], y[..., 0] - y[..., 1]], -1)
    gy = np.stack([x[..., 2] - x[..., 1], x[..., 0] - x[..., 2], x[..., 1] - x[..., 0]], -1)
    return np.stack([gx, gy], axis=-1) / twice_area[..., None, None]


def local_stiffness(p: np.ndarray) -> np.ndarray:
    """Element stiffness matrix of the triangle(s) with vertices p (..., 3, 2)."""
    grads = local_gradients(p)
    return _areas(p)[..., None, None] * np.einsum("...ik,...jk->...ij", grads, grads)


def _areas(p: np.ndarray) -> np.ndarray:
    d1 = p[..., 1, :] - p[..., 0, :]
    d2 = p[..., 2, :] - p[..., 0, :]
    return 0.5 * (d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


@dataclass(frozen=True, eq=False)
class FeSpace:
    """The P1 space V_h on a mesh, DOFs at interior vertices."""

    mesh: Mesh
    quadrature_order: int = 4

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_interior

    @cached_property
    def mass(self) -> CsrMatrix:
        return assemble_mass(self)

    @cached_property
    def stiffness(self) -> CsrMatrix:
        return assemble_stiffness(self)

    @cached_property
    def element_points(self) -> np.ndarray:
        return self.mesh.vertices[self.mesh.triangles]

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """Interior DOF of each triangle corner, -1 for boundary corners."""
        return self.mesh.interior_index[self.mesh.triangles]

    @cached_property
    def quadrature(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Physical points (nt, nq, 2), weights (nt, nq) and barycentrics (nq, 3)."""
        bary, weights = quadrature_rule(self.quadrature_order)
        points = np.einsum("qi,tid->tqd", bary, self.element_points)
        return points, self.mesh.areas[:, None] * weights[None, :], bary

    def nodal_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Extend DOF coefficients by zero to all mesh vertices."""
        values = np.zeros(self.mesh.n_vertices)
        values[self.mesh.interior_vertices] = coeffs
        return values

    def at_quadrature(self, coeffs: np.ndarray) -> np.ndarray:
        """Values of the FE function at the quadrature points, shape (nt, nq)."""
        _, _, bary = self.quadrature
        corners = self.nodal_values(coeffs)[self.mesh.triangles]
        return corners @ bary.T


@dataclass(frozen=True, eq=False)
class FeFunction:
    space: FeSpace
    coeffs: np.ndarray

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Point values at an (n, 2) array of points inside the domain."""
        return evaluation_matrix(self.space, points) @ self.coeffs


def _scatter_matrix(space: FeSpace, local: np.ndarray) -> CsrMatrix:
    dofs = space.element_dofs
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    return csr_from_triplets(
        rows[keep], cols[keep], local.reshape(-1)[keep], (space.n_dofs, space.n_dofs)
    )


def _scatter_vector(space: FeSpace, local: np.ndarray) -> np.ndarray:
    dofs = space.element_dofs.ravel()
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=local.ravel()[keep], minlength=space.n_dofs)


def assemble_mass(space: FeSpace) -> CsrMatrix:
    """M_ij = (phi_i, phi_j) over the domain, exact."""
    return _scatter_matrix(space, local_mass(space.element_points))


def assemble_stiffness(space: FeSpace) -> CsrMatrix:
    """A_ij = (grad phi_i, grad phi_j) over the domain, exact."""
    return _scatter_matrix(space, local_stiffness(space.element_points))


def point_load(space: FeSpace, x) -> np.ndarray:
    """The functional phi -> phi(x) as a DOF vector (barycentrics of x)."""
    tri, lam = meshlib.locate_point(space.mesh, x)
    load = np.zeros(space.n_dofs)
    dofs = space.element_dofs[tri]
    load[dofs[dofs >= 0]] = lam[dofs >= 0]
    return load


def evaluation_matrix(space: FeSpace, points: np.ndarray) -> CsrMatrix:
    """Sparse (n_points, n_dofs) operator evaluating FE functions at points."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    tris, lams = meshlib.locate_points(space.mesh, points)
    dofs = space.element_dofs[tris]
    rows = np.repeat(np.arange(len(points)), 3)
    keep = dofs.ravel() >= 0
    return csr_from_triplets(
        rows[keep], dofs.ravel()[keep], lams.ravel()[keep], (len(points), space.n_dofs)
    )


def assemble_load(space: FeSpace, f: SpaceField) -> np.ndarray:
    """F_i = (f, phi_i) by element quadrature."""
    points, weights, bary = space.quadrature
    values = np.broadcast_to(f(points[..., 0], points[..., 1]), weights.shape)
    local = (values * weights) @ bary
    return _scatter_vector(space, local)


def l2_project(space: FeSpace, v: SpaceField) -> FeFunction:
    """P_h v: (P_h v, chi) = (v, chi) for all chi in V_h."""
    result = cg_solve(space.mass, assemble_load(space, v), rel_tol=PROJECTION_REL_TOL)
    return FeFunction(space, result.x)


def ritz_project(space: FeSpace, grad_v: GradientField) -> FeFunction:
    """R_h v: (grad R_h v, grad chi) = (grad v, grad chi) for all chi in V_h."""
    points, weights, _ = space.quadrature
    gx, gy = grad_v(points[..., 0], points[..., 1])
    gx = np.broadcast_to(gx, weights.shape)
    gy = np.broadcast_to(gy, weights.shape)
    # Element integral of grad v, then dotted with the constant hat gradients.
    mean_grad = np.stack([(gx * weights).sum(1), (gy * weights).sum(1)], axis=-1)
    local = np.einsum("tid,td->ti", local_gradients(space.element_points), mean_grad)
    load = _scatter_vector(space, local)
    result = cg_solve(space.stiffness, load, rel_tol=PROJECTION_REL_TOL)
    return FeFunction(space, result.x)


def nodal_interpolate(space: FeSpace, v: SpaceField) -> FeFunction:
    """Lagrange interpolation at the interior vertices."""
    xy = space.mesh.vertices[space.mesh.interior_vertices]
    values = np.broadcast_to(v(xy[:, 0], xy[:, 1]), (space.n_dofs,))
    return FeFunction(space, np.array(values, dtype=float))


def discrete_laplacian(space: FeSpace, v_h: FeFunction) -> FeFunction:
    """Delta_h v_h: (-Delta_h v_h, chi) = (grad v_h, grad chi) for all chi."""
    rhs = -(space.stiffness @ v_h.coeffs)
    result = cg_solve(space.mass, rhs, rel_tol=PROJECTION_REL_TOL)
    return FeFunction(space, result.x)


def l2_error(function: FeFunction, v: SpaceField) -> float:
    """||v - v_h|| over the domain by quadrature."""
    space = function.space
    points, weights, _ = space.quadrature
    diff = v(points[..., 0], points[..., 1]) - space.at_quadrature(function.coeffs)
    return float(np.sqrt((weights * diff**2).sum()))


def h1_seminorm_error(function: FeFunction, grad_v: GradientField) -> float:
    """||grad(v - v_h)|| over the domain by quadrature."""
    space = function.space
    points, weights, _ = space.quadrature
    gx, gy = grad_v(points[..., 0], points[..., 1])
    corners = space.nodal_values(function.coeffs)[space.mesh.triangles]
    grad_h = np.einsum("ti,tid->td", corners, local_gradients(space.element_points))
    ex = gx - grad_h[:, 0:1]
    ey = gy - grad_h[:, 1:2]
    return float(np.sqrt((weights * (ex**2 + ey**2)).sum()))


@dataclass(frozen=True)
class SmoothedDelta:
    """One-cell P1 density reproducing point evaluation of P1 functions.

    Attributes:
        triangle: index of the supporting cell
        point: the point whose evaluation functional is reproduced
        coeffs: density values at the three corners of the cell
        area: area of the cell
    """

    triangle: int
    point: Tuple[float, float]
    coeffs: np.ndarray
    area: float

    def pair(self, corner_values: np.ndarray) -> float:
        """(chi, delta) over the cell for chi with the given corner values."""
        return float(corner_values @ (self.area * _MASS_TEMPLATE) @ self.coeffs)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.coeffs @ (self.area * _MASS_TEMPLATE) @ self.coeffs))

    def l1_norm(self, levels: int = 4) -> float:
        """||delta||_L1 by order-4 quadrature on a refined reference cell."""
        reference = meshlib.from_arrays(
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]])
        )
        for _ in range(levels):
            reference = meshlib.refine_uniform(reference)
        bary, weights = quadrature_rule(4)
        sub = reference.vertices[reference.triangles]
        points = np.einsum("qi,tid->tqd", bary, sub)
        lam = np.stack([1.0 - points[..., 0] - points[..., 1], points[..., 0], points[..., 1]], -1)
        values = np.abs(lam @ self.coeffs)
        # Sub-cell areas sum to 1/2 on the reference cell; scale to the real cell.
        w = 2.0 * self.area * reference.areas[:, None] * weights[None, :]
        return float((w * values).sum())


def smoothed_delta(space: FeSpace, x) -> SmoothedDelta:
    """Solve the local mass system M_tau d = lambda(x) on the cell containing x."""
    tri, lam = meshlib.locate_point(space.mesh, x)
    area = float(space.mesh.areas[tri])
    coeffs = np.linalg.solve(area * _MASS_TEMPLATE, lam)
    return SmoothedDelta(triangle=tri, point=(float(x[0]), float(x[1])), coeffs=coeffs, area=area)


def delta_load(space: FeSpace, delta: SmoothedDelta) -> np.ndarray:
    """b_i = (delta, phi_i) computed by quadrature of the density."""
    bary, weights = quadrature_rule(4)
    density = bary @ delta.coeffs
    local = delta.area * (weights * density) @ bary
    load = np.zeros(space.n_dofs)
    dofs = space.element_dofs[delta.triangle]
    load[dofs[dofs >= 0]] = local[dofs >= 0]
    return load


def sigma_inverse_l2(space: FeSpace, center, h: float) -> float:
    """||1/sigma||_L2 over the domain with sigma(x) = sqrt(|x - center|^2 + h^2)."""
    points, weights, _ = space.quadrature
    r2 = (points[..., 0] - center[0]) ** 2 + (points[..., 1] - center[1]) ** 2
    return float(np.sqrt((weights / (r2 + h * h)).sum()))
