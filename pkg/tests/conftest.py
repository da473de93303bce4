"""Shared fixtures: small meshes and their spectral data, computed once."""

import numpy as np
import pytest

from diffmatch.mesh import TriangleMesh, normalize_to_unit_area
from diffmatch.spectral import build_operators, eigendecompose
from diffmatch.synthetic import bumpy_sphere, vase_cylinder, wavy_plane


@pytest.fixture(scope="session")
def equilateral():
    """One equilateral triangle with unit side length."""
    vertices = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, np.sqrt(3.0) / 2.0, 0.0],
        ]
    )
    return TriangleMesh(vertices=vertices, faces=np.array([[0, 1, 2]]))


@pytest.fixture(scope="session")
def sphere():
    """Bumpy icosphere, 162 vertices, unit area."""
    return normalize_to_unit_area(bumpy_sphere(subdivisions=2))


@pytest.fixture(scope="session")
def sphere_ops(sphere):
    return build_operators(sphere)


@pytest.fixture(scope="session")
def sphere_basis(sphere_ops):
    return eigendecompose(sphere_ops, 40)


@pytest.fixture(scope="session")
def cylinder():
    """Vase-profile cylinder, 100 vertices, unit area."""
    return normalize_to_unit_area(vase_cylinder(10))


@pytest.fixture(scope="session")
def cylinder_ops(cylinder):
    return build_operators(cylinder)


@pytest.fixture(scope="session")
def cylinder_basis(cylinder_ops):
    return eigendecompose(cylinder_ops, 30)


@pytest.fixture(scope="session")
def plane():
    """Wavy open plane, 36 vertices — has a boundary, unlike the others."""
    return normalize_to_unit_area(wavy_plane(resolution=6))


@pytest.fixture(scope="session")
def plane_ops(plane):
    return build_operators(plane)


@pytest.fixture(scope="session")
def plane_basis(plane_ops):
    # full basis: n = 36, so every energy identity is exact
    return eigendecompose(plane_ops, 36)
