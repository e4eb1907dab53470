"""Scene configuration files.

Configs are INI files read with :mod:`configparser`. Lengths are in
micrometers and angles in degrees. Sections:

``[geometry]``
    ``L1``, ``L2``, ``b1``, ``b2`` and optionally ``b1p``, ``b2p`` (inner planes).
``[materials]``
    ``layout`` is ``flat``, ``checkerboard`` or ``boxes``. Top and bottom media
    use ``eps_top``/``mu_top`` and ``eps_bottom``/``mu_bottom``. Permittivities
    may be complex, written like ``2.25+0.1j``.

    * ``flat``: ``interface`` height.
    * ``checkerboard``: ``slab_lo``, ``slab_hi``, ``eps_a``, ``eps_b``.
    * ``boxes``: any number of ``box.<name> = x0 y0 z0 x1 y1 z1 eps [mu]`` lines.
``[incidence]``
    ``wavelength``, ``theta1``, ``theta2`` and ``polarization``. The polarization
    is ``te`` (horizontal, ``(-alpha2, alpha1, 0)``) or three components, where
    the last may be ``auto`` to make the vector transverse.
``[adaptivity]``
    Fields of :class:`~dtngrating.adapt.AdaptConfig`, plus ``N1``/``N2`` to fix
    the truncation orders.
``[output]``
    ``directory``, ``prefix`` and ``vtk`` (write the final mesh and field).
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os

import numpy as np

from dtngrating.adapt import AdaptConfig
from dtngrating.errors import ConfigError, GeometryError
from dtngrating.mesh import BoxRegion, GratingScene
from dtngrating.quasi_fourier import IncidentWave, MediumConstants, te_polarization
from dtngrating.scenarios import checkerboard_scene, flat_scene


@dataclasses.dataclass(frozen=True)
class OutputConfig:
    directory: str = "."
    prefix: str = "run"
    vtk: bool = True


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything needed for one run, as parsed from a config file."""

    scene: GratingScene
    wave: IncidentWave
    adapt: AdaptConfig
    output: OutputConfig
    layout: str = "boxes"
    source: str = ""


def _get(sec, key, conv=float, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"[{sec.name}] is missing {key!r}")
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r} is not a valid value") from None


def _cplx(s: str) -> complex:
    return complex(s.replace(" ", "").replace("i", "j"))


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(s)


def _section(cp, name, required=True):
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"missing section [{name}]")
        cp.add_section(name)
    return cp[name]


def _parse_scene(cp) -> tuple[GratingScene, str]:
    g = _section(cp, "geometry")
    m = _section(cp, "materials")
    L1 = _get(g, "L1", required=True)
    L2 = _get(g, "L2", required=True)
    b1 = _get(g, "b1", required=True)
    b2 = _get(g, "b2", required=True)
    kw = {k: _get(g, k) for k in ("b1p", "b2p") if k in g}
    if "d_fraction" in g:
        kw["d_fraction"] = _get(g, "d_fraction")
    name = _get(g, "name", str, default="")
    top = MediumConstants(_get(m, "eps_top", _cplx, 1.0), _get(m, "mu_top", default=1.0))
    bottom = MediumConstants(_get(m, "eps_bottom", _cplx, 1.0), _get(m, "mu_bottom", default=1.0))
    layout = _get(m, "layout", str, "flat").lower()
    try:
        if layout == "flat":
            scene = flat_scene(L1, L2, b1, b2, top, bottom, _get(m, "interface", default=0.0), name=name, **kw)
        elif layout == "checkerboard":
            if abs(L1 - L2) > 1e-12 * L1:
                raise ConfigError("checkerboard layout needs L1 == L2")
            scene = checkerboard_scene(
                period=L1, b1=b1, b2=b2,
                slab=(_get(m, "slab_lo", required=True), _get(m, "slab_hi", required=True)),
                eps_a=_get(m, "eps_a", _cplx, 1.0), eps_b=_get(m, "eps_b", _cplx, 2.25),
                eps_top=top.eps, eps_sub=bottom.eps, name=name, **kw,
            )
        elif layout == "boxes":
            regions = []
            for key in sorted(k for k in m if k.startswith("box")):
                parts = m[key].split()
                if len(parts) not in (7, 8):
                    raise ConfigError(f"[materials] {key}: expected 'x0 y0 z0 x1 y1 z1 eps [mu]'")
                lo = tuple(float(v) for v in parts[:3])
                hi = tuple(float(v) for v in parts[3:6])
                mu = float(parts[7]) if len(parts) == 8 else 1.0
                regions.append(BoxRegion(lo, hi, _cplx(parts[6]), mu))
            scene = GratingScene(L1, L2, b1, b2, top, bottom, tuple(regions), name=name, **kw)
        else:
            raise ConfigError(f"unknown layout {layout!r}")
    except GeometryError as exc:
        raise ConfigError(f"invalid geometry: {exc}") from None
    return scene, layout


def _parse_wave(cp, top: MediumConstants) -> IncidentWave:
    s = _section(cp, "incidence")
    lam = _get(s, "wavelength", required=True)
    th1 = math.radians(_get(s, "theta1", default=0.0))
    th2 = math.radians(_get(s, "theta2", default=0.0))
    pol = _get(s, "polarization", str, "te").strip().lower()
    if pol == "te":
        p = te_polarization(lam, th1, th2, top)
    else:
        parts = [v.strip() for v in pol.replace(",", " ").split()]
        if len(parts) != 3:
            raise ConfigError("polarization must be 'te' or three components")
        probe = IncidentWave(lam, th1, th2, (0, 0, 0), top)
        pt = np.array([_cplx(parts[0]), _cplx(parts[1])])
        if parts[2] == "auto":
            p3 = (probe.alpha @ pt) / probe.beta
        else:
            p3 = _cplx(parts[2])
        p = (pt[0], pt[1], p3)
    return IncidentWave(lam, th1, th2, p, top)


def _parse_adapt(cp) -> AdaptConfig:
    s = _section(cp, "adaptivity", required=False)
    kw = {}
    for key, conv in (
        ("tol", float), ("tau", float), ("delta_trunc", float), ("max_iter", int),
        ("max_dofs", int), ("uniform", _bool), ("solver", str), ("solver_tol", float),
        ("initial_h", float),
    ):
        v = _get(s, key, conv)
        if v is not None:
            kw[key] = v
    N1, N2 = _get(s, "N1", int), _get(s, "N2", int)
    if (N1 is None) != (N2 is None):
        raise ConfigError("give both N1 and N2 or neither")
    if N1 is not None:
        kw["truncation"] = (N1, N2)
    return AdaptConfig(**kw)


def _parse_output(cp, base_dir) -> OutputConfig:
    s = _section(cp, "output", required=False)
    directory = _get(s, "directory", str, ".")
    if not os.path.isabs(directory):
        directory = os.path.normpath(os.path.join(base_dir, directory))
    return OutputConfig(directory, _get(s, "prefix", str, "run"), _get(s, "vtk", _bool, True))


def parse_config(text: str, base_dir: str = ".", source: str = "<string>") -> RunConfig:
    """Parse config text; relative output directories resolve against ``base_dir``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep L1/N1 case
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    scene, layout = _parse_scene(cp)
    wave = _parse_wave(cp, scene.top)
    return RunConfig(scene, wave, _parse_adapt(cp), _parse_output(cp, base_dir), layout, source)


def load_config(path) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)), path)
