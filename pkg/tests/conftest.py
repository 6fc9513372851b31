"""Shared fixtures: analytic scenes are expensive to build, so the big
sphere map and its compressed form are session-scoped."""

from types import SimpleNamespace

import numpy as np
import pytest

import ttreg

BOUNDS = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))
SPHERE = ttreg.Sphere(center=(0.0, 0.0, 0.0), radius=0.5)


@pytest.fixture(scope="session")
def sphere128():
    """128^3 sphere SDF with a 2000-point surface observation."""
    vol = ttreg.analytic_sdf(SPHERE, (128, 128, 128), BOUNDS)
    h = float(vol.spacing[0])
    points = ttreg.sample_surface_points(
        SPHERE, 2000, np.random.default_rng(7), bounds=BOUNDS, band=h / 2
    )
    return SimpleNamespace(shape=SPHERE, vol=vol, points=points, h=h)


@pytest.fixture(scope="session")
def sphere128_tt20(sphere128):
    return ttreg.CompressedSDF.from_volume(sphere128.vol, ttreg.TTBuildSpec(max_rank=20))


@pytest.fixture(scope="session")
def box64():
    """64^3 box SDF; all six pose directions are observable on this scene."""
    shape = ttreg.Box(center=(0.0, 0.0, 0.0), half_extents=(0.5, 0.35, 0.25))
    vol = ttreg.analytic_sdf(shape, (64, 64, 64), BOUNDS)
    h = float(vol.spacing[0])
    points = ttreg.sample_surface_points(
        shape, 2000, np.random.default_rng(7), bounds=BOUNDS, band=h / 2
    )
    return SimpleNamespace(shape=shape, vol=vol, points=points, h=h)
