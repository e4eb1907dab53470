import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dtngrating import scenarios
from dtngrating.mesh import build_initial_mesh
from dtngrating.quasi_fourier import IncidentWave, MediumConstants

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ex1():
    return scenarios.example1()


@pytest.fixture(scope="session")
def ex1_coarse(ex1):
    """Example 1 scene on the structured mesh with h = 0.25 (one cell per lateral half)."""
    scene, _ = ex1
    return build_initial_mesh(scene, 0.25)


@pytest.fixture(scope="session")
def ex1_mesh(ex1):
    scene, _ = ex1
    return build_initial_mesh(scene, 0.125)


@pytest.fixture(scope="session")
def vacuum_box():
    """Homogeneous unit cell with a normally incident wave."""
    med = MediumConstants(1.0)
    scene = scenarios.flat_scene(0.8, 0.8, 0.5, -0.5, med, med, name="vacuum")
    wave = IncidentWave(1.0, 0.0, 0.0, (1.0, 0.0, 0.0), med)
    return scene, wave


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_tet(rng, scale=1.0):
    while True:
        P = rng.normal(size=(4, 3)) * scale
        vol = abs(np.linalg.det(P[1:] - P[0])) / 6
        if vol > 0.02 * scale**3:
            return P


def te_wave(theta1, theta2, top=MediumConstants(1.0), wavelength=1.0):
    from dtngrating.quasi_fourier import te_polarization

    return IncidentWave(
        wavelength, theta1, theta2, te_polarization(wavelength, theta1, theta2, top), top
    )


PI = math.pi
