"""
Pytest configuration and fixtures for hydrosplit tests.

Provides the unit-square domain, coarse column meshes, discrete spaces and
a seeded random generator shared by all test modules. Refinement studies
are marked ``slow`` and only run with ``--runslow``.
"""

import numpy as np
import pytest

from hydrosplit.mesh import (
    Bathymetry,
    NodalBathymetry,
    SurfaceDomainSpec,
    build_surface_mesh,
    extrude_iso_sigma,
)
from hydrosplit.models import ElementPair
from hydrosplit.stepper import DiscreteSpaces


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run refinement studies")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-level refinement study (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def unit_square():
    """Unit square surface with constant depth D = 1."""
    return SurfaceDomainSpec()


@pytest.fixture(scope="session")
def sloped_square():
    """Unit square with linear bathymetry D = 1 + x/4."""
    return SurfaceDomainSpec(
        polygon_vertices=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        depth=Bathymetry(d0=1.0, dx=0.25),
    )


@pytest.fixture(scope="session")
def bump_square():
    """Unit square with nodal depths on a 3 x 3 grid: 1 at the rim, 1.5 in the centre."""
    grid = [[1.0, 1.0, 1.0], [1.0, 1.5, 1.0], [1.0, 1.0, 1.0]]
    return SurfaceDomainSpec(depth=NodalBathymetry.on_grid((0.0, 1.0, 0.0, 1.0), grid))


@pytest.fixture(scope="session")
def coarse_mesh(unit_square):
    """h = 1/2, two layers: 8 triangles, 48 tets."""
    return extrude_iso_sigma(build_surface_mesh(unit_square, 0.5), unit_square, 2)


@pytest.fixture(scope="session")
def quarter_mesh(unit_square):
    """h = 1/4, four layers: the acceptance mesh."""
    return extrude_iso_sigma(build_surface_mesh(unit_square, 0.25), unit_square, 4)


@pytest.fixture(scope="session")
def sloped_mesh(sloped_square):
    return extrude_iso_sigma(build_surface_mesh(sloped_square, 0.5), sloped_square, 2)


@pytest.fixture(scope="session")
def th_spaces(coarse_mesh):
    """Taylor-Hood spaces on the coarse mesh."""
    return DiscreteSpaces.build(coarse_mesh, ElementPair.TAYLOR_HOOD)


@pytest.fixture(scope="session")
def mini_spaces(coarse_mesh):
    """Mini-element spaces on the coarse mesh."""
    return DiscreteSpaces.build(coarse_mesh, ElementPair.MINI)


@pytest.fixture(scope="session")
def th_quarter(quarter_mesh):
    return DiscreteSpaces.build(quarter_mesh, ElementPair.TAYLOR_HOOD)


@pytest.fixture
def rng():
    """Seeded numpy Generator."""
    return np.random.default_rng(20240611)
