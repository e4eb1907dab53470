"""Adaptive edge-element solver for biperiodic grating diffraction.

The scattering problem is posed in one period cell and closed at the top
and bottom by a truncated Dirichlet-to-Neumann (DtN) boundary condition.
Typical use::

    from dtngrating import adapt, scenarios
    scene, wave = scenarios.example1()
    result = adapt.run(scene, wave, adapt.AdaptConfig(max_dofs=50_000))
"""

from dtngrating.adapt import AdaptConfig, AdaptResult, choose_truncation, mark, run
from dtngrating.errors import GratingError
from dtngrating.mesh import BoxRegion, GratingScene, PeriodicMesh, build_initial_mesh, refine
from dtngrating.quasi_fourier import IncidentWave, MediumConstants, ModeSet, build_mode_set

__all__ = [
    "AdaptConfig",
    "AdaptResult",
    "BoxRegion",
    "GratingError",
    "GratingScene",
    "IncidentWave",
    "MediumConstants",
    "ModeSet",
    "PeriodicMesh",
    "build_initial_mesh",
    "build_mode_set",
    "choose_truncation",
    "mark",
    "refine",
    "run",
]

__version__ = "0.1.0"
