"""Tests for mesh construction, refinement and point location."""

import math

import numpy as np
import pytest

from cmd.curvectrl import mesh
from cmd.curvectrl.exceptions import InvalidArgument, PointOutsideDomain


def test_uniform_square_counts():
    """n x n cells give (n+1)^2 vertices, 2n^2 triangles and (n-1)^2 interior DOFs."""
    m = mesh.build_uniform_square(4)
    assert m.n_vertices == 25
    assert m.n_triangles == 32
    assert m.n_interior == 9
    assert m.h == pytest.approx(math.sqrt(2.0) / 4)
    assert m.areas.sum() == pytest.approx(1.0)
    assert np.all(m.areas > 0)


def test_single_interior_vertex():
    """The 2 x 2 square has exactly one interior vertex at its center."""
    m = mesh.build_uniform_square(2)
    assert m.n_interior == 1
    np.testing.assert_allclose(m.vertices[m.interior_vertices[0]], [0.5, 0.5])
    assert m.interior_index[m.interior_vertices[0]] == 0


def test_invalid_size_rejected():
    with pytest.raises(InvalidArgument):
        mesh.build_uniform_square(0)


def test_refine_uniform_halves_h_and_keeps_parents():
    """Refinement keeps parent vertices and quadruples the triangle count."""
    coarse = mesh.build_uniform_square(2)
    fine = mesh.refine_uniform(coarse)
    assert fine.n_triangles == 4 * coarse.n_triangles
    assert fine.n_vertices == 25
    assert fine.h == pytest.approx(coarse.h / 2)
    np.testing.assert_array_equal(fine.vertices[: coarse.n_vertices], coarse.vertices)
    assert fine.areas.sum() == pytest.approx(1.0)
    assert fine.n_interior == 9


def test_from_arrays_rejects_clockwise_triangle():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InvalidArgument):
        mesh.from_arrays(vertices, np.array([[0, 2, 1]]))


def test_from_arrays_derives_boundary_flags():
    """A single triangle has only boundary vertices."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = mesh.from_arrays(vertices, np.array([[0, 1, 2]]))
    assert m.boundary_flags.all()
    assert m.n_interior == 0


def test_locate_point_reproduces_coordinates(rng):
    m = mesh.build_uniform_square(8)
    for x in rng.uniform(0.0, 1.0, size=(25, 2)):
        tri, lam = mesh.locate_point(m, x)
        assert lam.sum() == pytest.approx(1.0)
        assert np.all(lam >= -1e-12)
        np.testing.assert_allclose(lam @ m.vertices[m.triangles[tri]], x, atol=1e-14)


def test_locate_point_vertex_uses_lowest_triangle():
    """Ties on a shared vertex resolve to the lowest triangle index."""
    m = mesh.build_uniform_square(2)
    tri, lam = mesh.locate_point(m, (0.5, 0.5))
    owners = np.flatnonzero((m.triangles == 4).any(axis=1))
    assert tri == owners.min()
    np.testing.assert_allclose(lam[m.triangles[tri] == 4], [1.0])


def test_locate_point_outside_raises():
    m = mesh.build_uniform_square(2)
    with pytest.raises(PointOutsideDomain) as info:
        mesh.locate_point(m, (1.5, 0.5))
    assert info.value.point == (1.5, 0.5)


def test_locate_points_matches_single_location(rng):
    m = mesh.build_uniform_square(6)
    points = rng.uniform(0.0, 1.0, size=(30, 2))
    points[0] = (0.5, 0.5)
    points[1] = (0.0, 1.0)
    tris, lams = mesh.locate_points(m, points)
    for x, tri, lam in zip(points, tris, lams):
        expected_tri, expected_lam = mesh.locate_point(m, x)
        assert tri == expected_tri
        np.testing.assert_allclose(lam, expected_lam)


def test_dump_and_load_mesh(tmp_path):
    m = mesh.refine_uniform(mesh.build_uniform_square(3))
    path = tmp_path / "square.mesh"
    mesh.dump_mesh(m, path)
    assert path.read_text().startswith(f"mesh v1 {m.n_vertices} {m.n_triangles}")
    loaded = mesh.load_mesh(path)
    np.testing.assert_array_equal(loaded.vertices, m.vertices)
    np.testing.assert_array_equal(loaded.triangles, m.triangles)
    np.testing.assert_array_equal(loaded.boundary_flags, m.boundary_flags)
