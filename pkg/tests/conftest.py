import numpy as np
import pytest

from npat.geometry import BoundaryMap, Geometry, Grid, NodeKind, SpeedField, build_corner_geometry
from npat.operators import Propagator
from npat.phantoms import PhantomKind, PhantomSpec, make_phantom


def corner(h=0.05, pad=1.5, arm=1.0, speed=None):
    grid, bmap = build_corner_geometry(arm, pad, h)
    c = speed(grid) if speed is not None else SpeedField.constant(grid)
    return Geometry(grid, c, bmap)


def closed_box(nx, ny, h, c0=1.0, speed=None):
    """All-Wall rectangle: no Measurement nodes, no Truncation."""
    grid = Grid(nx, ny, h)
    kind = np.zeros(grid.shape, dtype=np.int8)
    kind[grid.boundary_ring()] = NodeKind.WALL
    c = speed(grid) if speed is not None else SpeedField.constant(grid, c0)
    return Geometry(grid, c, BoundaryMap(kind, np.zeros(grid.shape)))


def bump(x, y, r, amp=1.0, velocity_part=False):
    return PhantomSpec(PhantomKind.BUMP, ((x, y),), (r,), (amp,), velocity_part=velocity_part)


SMALL_CONFIG = """
[geometry]
preset = corner
arm_length = 1.0
pad = 1.5
h = 0.05

[time]
T = 0.6

[phantom]
kind = bump
centers = 0.4 0.4
radii = 0.15

[iteration]
j_max = 3

[rays]
n_dirs = 16
heatmap_stride = 2
"""


@pytest.fixture
def small_corner():
    """51 x 51 nodes, h = 0.05, padded for T = 0.6."""
    return corner()


@pytest.fixture
def small_prop(small_corner):
    return Propagator(small_corner, 0.6)


@pytest.fixture
def small_bump(small_corner):
    return make_phantom(bump(0.4, 0.4, 0.15), small_corner)


@pytest.fixture
def visible_corner():
    """65 x 65 nodes, h = 0.05, padded for T = 1 (the reference layout at half resolution)."""
    return corner(h=0.05, pad=2.2)


@pytest.fixture
def visible_prop(visible_corner):
    return Propagator(visible_corner, 1.0)


@pytest.fixture
def visible_bump(visible_corner):
    """Well inside the wedge x + y < 1, so every ray through its region meets an arm."""
    return make_phantom(bump(0.3, 0.3, 0.1), visible_corner)


@pytest.fixture
def small_config_text():
    return SMALL_CONFIG
