"""Scenario library and post-processing.

* ``example1``: a flat interface between two half-spaces, with the exact
  plane-wave solution in :class:`ExactFlatSolution`.
* ``example2``: a 2x2 dielectric checkerboard slab on a substrate. Its
  permittivities and slab thickness are implementer defaults, not measured data.

Post-processing extracts Rayleigh coefficients on horizontal mesh planes,
checks the exponential decay of evanescent orders, and converts the
propagating coefficients into diffraction efficiencies.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from dtngrating import dtn
from dtngrating.errors import ConfigError, PlaneNotConformingError
from dtngrating.fem import DiscreteField
from dtngrating.mesh import BoxRegion, GratingScene
from dtngrating.quadrature import composite_tetrahedron_rule
from dtngrating.quasi_fourier import (
    IncidentWave,
    MediumConstants,
    lattice_alphas,
    te_polarization,
    vertical_wavenumbers,
)

VACUUM = MediumConstants(1.0)


# -- scenes -----------------------------------------------------------------


def flat_scene(L1, L2, b1, b2, top, bottom, interface=0.0, **kw) -> GratingScene:
    """Two half-spaces meeting at ``x3 = interface``."""
    regions = (
        BoxRegion((0.0, 0.0, interface), (L1, L2, b1), top.eps, top.mu),
        BoxRegion((0.0, 0.0, b2), (L1, L2, interface), bottom.eps, bottom.mu),
    )
    return GratingScene(L1, L2, b1, b2, top, bottom, regions, **kw)


def example1(wavelength=1.0, n1=1.0, n2=1.5, **kw):
    """Flat interface, ``theta1 = theta2 = pi/6``, polarization ``(-alpha2, alpha1, 0)``.

    Returns:
        ``(scene, wave)``.
    """
    top, bottom = MediumConstants(n1**2), MediumConstants(n2**2)
    scene = flat_scene(0.5, 0.5, 0.3, -0.3, top, bottom, name="example1", **kw)
    th = math.pi / 6
    wave = IncidentWave(wavelength, th, th, te_polarization(wavelength, th, th, top), top)
    return scene, wave


def checkerboard_scene(
    period=1.25 * math.sqrt(2), b1=2.0, b2=-2.0, slab=(-0.5, 0.5),
    eps_a=1.0, eps_b=2.25, eps_top=1.0, eps_sub=2.25, **kw,
) -> GratingScene:
    """2x2 checker of ``eps_a``/``eps_b`` squares in the slab, substrate below.

    Squares ``[0, P/2]^2`` and ``[P/2, P]^2`` hold ``eps_b``; the other two hold ``eps_a``.
    """
    P, h = period, period / 2
    lo, hi = slab
    top, sub = MediumConstants(eps_top), MediumConstants(eps_sub)
    regions = (
        BoxRegion((0.0, 0.0, hi), (P, P, b1), eps_top),
        BoxRegion((0.0, 0.0, b2), (P, P, lo), eps_sub),
        BoxRegion((0.0, 0.0, lo), (h, h, hi), eps_b),
        BoxRegion((h, h, lo), (P, P, hi), eps_b),
        BoxRegion((h, 0.0, lo), (P, h, hi), eps_a),
        BoxRegion((0.0, h, lo), (h, P, hi), eps_a),
    )
    return GratingScene(P, P, b1, b2, top, sub, regions, **kw)


def example2(wavelength=1.0, **kw):
    """Checkerboard grating at normal incidence with polarization ``(1, 1, 0)``."""
    scene = checkerboard_scene(name="example2", **kw)
    wave = IncidentWave(wavelength, 0.0, 0.0, (1.0, 1.0, 0.0), scene.top)
    return scene, wave


# -- exact flat-interface solution -------------------------------------------


@dataclasses.dataclass(frozen=True)
class ExactFlatSolution:
    """Plane-wave solution for a flat interface under horizontal polarization.

    Above the interface ``E = p e^{i a.x}(e^{-i b1 z} + r e^{i b1 z})``, below
    ``E = t p e^{i a.x} e^{-i b2 z}`` with ``z = x3 - interface``.
    """

    wave: IncidentWave
    top: MediumConstants
    bottom: MediumConstants
    interface: float = 0.0

    def __post_init__(self):
        p = self.wave.p
        if abs(p[2]) > 0 or abs(np.dot(self.wave.alpha, p[:2])) > 1e-12 * max(
            1.0, np.linalg.norm(p) * np.linalg.norm(self.wave.alpha)
        ):
            raise ConfigError("the closed-form solution needs horizontal polarization")

    @property
    def beta1(self) -> complex:
        return complex(self.wave.beta)

    @property
    def beta2(self) -> complex:
        return complex(vertical_wavenumbers(self.bottom.kappa_sq(self.wave.omega), self.wave.alpha)[0])

    @property
    def r(self) -> complex:
        g1, g2 = self.beta1 / self.top.mu, self.beta2 / self.bottom.mu
        return (g1 - g2) / (g1 + g2)

    @property
    def t(self) -> complex:
        g1, g2 = self.beta1 / self.top.mu, self.beta2 / self.bottom.mu
        return 2 * g1 / (g1 + g2)

    def _parts(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a = np.asarray(self.wave.alpha)
        lat = np.exp(1j * (x[:, :2] @ a))
        z = x[:, 2] - self.interface
        above = z >= 0
        return x, a, lat, z, above

    def field(self, x) -> np.ndarray:
        x, a, lat, z, above = self._parts(x)
        b1, b2 = self.beta1, self.beta2
        f = np.where(above, np.exp(-1j * b1 * z) + self.r * np.exp(1j * b1 * z), self.t * np.exp(-1j * b2 * z))
        return (lat * f)[:, None] * self.wave.p

    def curl(self, x) -> np.ndarray:
        x, a, lat, z, above = self._parts(x)
        p = self.wave.p
        b1, b2 = self.beta1, self.beta2
        out = np.zeros((len(x), 3), dtype=complex)
        for q3, amp, mask in (
            (-b1, np.exp(-1j * b1 * z), above),
            (b1, self.r * np.exp(1j * b1 * z), above),
            (-b2, self.t * np.exp(-1j * b2 * z), ~above),
        ):
            q = np.array([a[0], a[1], q3], dtype=complex)
            out += (mask * lat * amp)[:, None] * (1j * np.cross(q, p))
        return out

    def __call__(self, x):
        return self.field(x)


def exact_flat_field(wave, media, x):
    """``(E, curl E)`` of the flat-interface solution at points ``x``."""
    sol = ExactFlatSolution(wave, *media)
    return sol.field(x), sol.curl(x)


# -- error norms ------------------------------------------------------------


def hcurl_error(field: DiscreteField, exact, kappa=None, degree: int = 4, per_element=False):
    """``||E - E_h||_{H(curl)}`` by elementwise quadrature.

    Each element uses a degree-``degree`` rule, uniformly subdivided until
    ``kappa h_sub <= 1``.

    Args:
        exact: object with ``field(x)`` and ``curl(x)`` methods.
        kappa: largest wavenumber in the cell (defaults to the scene maximum).
    """
    mesh = field.mesh
    if kappa is None:
        kappa = max(math.sqrt(abs(m.kappa_sq(_omega_of(exact)))) for m in mesh.scene.materials)
    h = mesh.tet_diameters
    levels = np.maximum(0, np.ceil(np.log2(np.maximum(kappa * h, 1e-300)))).astype(int)
    a, b = field.affine
    curl_h = field.curl
    V = mesh.vertices[mesh.tets]
    err = np.zeros(mesh.n_elements)
    for lev in np.unique(levels):
        ids = np.flatnonzero(levels == lev)
        pts, w = composite_tetrahedron_rule(max(4, degree), int(lev))
        lam = np.column_stack([1 - pts.sum(1), pts])
        for s0 in range(0, len(ids), 4096):
            e = ids[s0:s0 + 4096]
            X = np.einsum("qa,eai->eqi", lam, V[e])
            Xf = X.reshape(-1, 3)
            Eh = a[e][:, None, :] + np.cross(b[e][:, None, :], X)
            dE = exact.field(Xf).reshape(X.shape) - Eh
            dC = exact.curl(Xf).reshape(X.shape) - curl_h[e][:, None, :]
            integrand = (np.abs(dE) ** 2).sum(-1) + (np.abs(dC) ** 2).sum(-1)
            err[e] = 6.0 * mesh.tet_volumes[e] * (integrand @ w)
    total = float(np.sqrt(err.sum()))
    return (total, np.sqrt(err)) if per_element else total


def _omega_of(exact):
    return exact.wave.omega


# -- Rayleigh coefficients --------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RayleighSpectrum:
    """Fourier coefficients ``E_ln`` (l = 1, 2, 3) of the field on one plane."""

    x3: float
    indices: np.ndarray
    alphas: np.ndarray
    coeffs: np.ndarray  # (m, 3)

    def coefficient(self, n) -> np.ndarray:
        n = tuple(n)
        for i, row in enumerate(self.indices):
            if tuple(int(v) for v in row) == n:
                return self.coeffs[i]
        raise KeyError(n)


def conforming_planes(mesh, rtol=1e-9):
    """Heights ``x3`` where horizontal mesh faces tile the whole cell."""
    s = mesh.scene
    Z = mesh.vertices[mesh.faces][:, :, 2]
    flat = np.ptp(Z, axis=1) <= rtol * (s.b1 - s.b2)
    z = Z[flat, 0]
    key = np.round(z / ((s.b1 - s.b2) * 1e-9)).astype(np.int64)
    out = {}
    areas = mesh.face_areas[flat]
    for k in np.unique(key):
        sel = key == k
        if abs(areas[sel].sum() - s.L1 * s.L2) <= 1e-9 * s.L1 * s.L2:
            out[float(z[sel].mean())] = np.flatnonzero(flat)[sel]
    return dict(sorted(out.items()))


def snap_plane(mesh, x3, tol=None):
    """Nearest conforming plane to ``x3`` and its faces.

    Raises:
        PlaneNotConformingError: if none lies within ``tol`` (default: the
            largest element diameter).
    """
    planes = conforming_planes(mesh)
    if tol is None:
        tol = float(mesh.tet_diameters.max())
    if not planes:
        raise PlaneNotConformingError("mesh has no conforming horizontal plane")
    z = min(planes, key=lambda v: abs(v - x3))
    if abs(z - x3) > tol:
        raise PlaneNotConformingError(f"no conforming plane within {tol:g} of x3 = {x3}")
    return z, planes[z]


def rayleigh_extract(
    field: DiscreteField, x3_plane: float, indices, alphas=None, tol=None,
) -> RayleighSpectrum:
    """``E_ln = (1/(L1 L2)) int E_l exp(-i alpha_n . x)`` on a conforming plane.

    The normal component is averaged over the elements on both sides of the
    plane; tangential components are continuous.

    Args:
        indices: lattice indices ``(m, 2)`` of the requested modes.
        alphas: matching lateral wavevectors (computed from the Bloch vector if omitted).
    """
    mesh = field.mesh
    s = mesh.scene
    indices = np.asarray(indices, dtype=int).reshape(-1, 2)
    if alphas is None:
        alphas = lattice_alphas(field.dofmap.alpha, s.L1, s.L2, indices)
    alphas = np.asarray(alphas, dtype=float).reshape(-1, 2)
    z, faces = snap_plane(mesh, x3_plane, tol)
    a, b = field.affine
    ft = mesh.face_tets[faces]
    acc = np.zeros((len(alphas), 3), dtype=complex)
    for msub, sub, _lam, X, W in dtn.mode_face_quadrature(mesh, faces, alphas):
        both = ft[sub]
        E = np.zeros(X.shape, dtype=complex)
        cnt = np.zeros(len(sub))
        for col in (0, 1):
            t = both[:, col]
            ok = t >= 0
            E[ok] += a[t[ok]][:, None, :] + np.cross(b[t[ok]][:, None, :], X[ok])
            cnt += ok
        E /= cnt[:, None, None]
        ph = np.exp(-1j * (X[:, :, :2] @ alphas[msub].T)) * W[:, :, None]
        acc[msub] += np.einsum("fqm,fql->ml", ph, E)
    return RayleighSpectrum(z, indices, alphas, acc / (s.L1 * s.L2))


@dataclasses.dataclass
class DecayReport:
    worst_ratio: float
    ok: bool
    rows: list  # (j, n, component, |E(b_j)|, |E(b_j')|, bound)


def decay_check(field: DiscreteField, modeset, slack: float = 1.5, floor_rel: float = 1e-10) -> DecayReport:
    """Exponential decay of evanescent orders between ``b_j'`` and ``b_j``.

    For every mode with ``Re kappa_j^2 <= |alpha_n|^2`` and each component,
    checks ``|E_ln(b_j)| <= slack |E_ln(b_j')| exp(-d_j sqrt(|alpha_n|^2 - Re kappa_j^2)) + floor``.
    ``floor`` is ``floor_rel`` times the largest coefficient on the inner plane
    and only absorbs coefficients at round-off level (orders that vanish by symmetry).
    The reported ratio is ``|E_ln(b_j)| / (|E_ln(b_j')| exp(...))`` over the
    coefficients above the floor.
    """
    s = field.mesh.scene
    rows = []
    worst = 0.0
    ok = True
    for j in (1, 2):
        idx = modeset.indices(j)
        al = modeset.alphas(j)
        k2 = modeset.kappa_sq(j).real
        ev = np.einsum("ij,ij->i", al, al) >= k2
        if not ev.any():
            continue
        outer = s.b1 if j == 1 else s.b2
        inner = s.b1p if j == 1 else s.b2p
        So = rayleigh_extract(field, outer, idx[ev], al[ev], tol=1e-9)
        Si = rayleigh_extract(field, inner, idx, al, tol=1e-9)
        floor = floor_rel * float(np.abs(Si.coeffs).max())
        inner_ev = Si.coeffs[ev]
        decay = np.exp(-s.d(j) * np.sqrt(np.einsum("ij,ij->i", al[ev], al[ev]) - k2))
        for m in range(int(ev.sum())):
            for comp in range(3):
                eo, ei = abs(So.coeffs[m, comp]), abs(inner_ev[m, comp])
                bound = ei * decay[m]
                ok &= bool(eo <= slack * bound + floor)
                if eo > floor:
                    worst = max(worst, eo / bound if bound > 0 else math.inf)
                rows.append((j, tuple(int(v) for v in idx[ev][m]), comp, eo, ei, bound))
    return DecayReport(worst, ok, rows)


def zeroth_reflection(above: RayleighSpectrum, wave) -> complex:
    """Computed ``r`` of the zeroth reflected order, comparable to ``ExactFlatSolution.r``.

    The incident wave is removed from the ``(0, 0)`` coefficient on the upper
    plane, the result is shifted back to ``x3 = 0`` and divided by the
    dominant tangential component of the incident polarization.
    """
    k0 = next(i for i, n in enumerate(above.indices) if tuple(n) == (0, 0))
    phase = np.exp(-1j * wave.beta * above.x3)
    r_vec = (above.coeffs[k0, :2] - wave.p[:2] * phase) * phase
    j = int(np.argmax(np.abs(wave.p[:2])))
    return complex(r_vec[j] / wave.p[j])


# -- efficiencies -------------------------------------------------------------


def boundary_spectra(field: DiscreteField, modeset):
    """Spectra on ``x3 = b1`` and ``x3 = b2`` for the truncated mode sets.

    The face rules match those of the DtN trace vectors, so the tangential
    coefficients coincide with the ones entering the discrete problem.
    """
    s = field.mesh.scene
    out = []
    for j, z in ((1, s.b1), (2, s.b2)):
        out.append(rayleigh_extract(field, z, modeset.indices(j), modeset.alphas(j), tol=1e-9))
    return tuple(out)


@dataclasses.dataclass
class Efficiencies:
    reflected: dict  # n -> R_n
    transmitted: dict  # n -> T_n

    @property
    def total(self) -> float:
        return float(sum(self.reflected.values()) + sum(self.transmitted.values()))


def _full_amplitude_sq(alpha, pt, beta, sign):
    """``|p|^2`` of a transverse plane wave from its tangential part.

    ``sign`` is +1 for ``q3 = +beta`` (upgoing) and -1 for ``q3 = -beta``.
    """
    p3 = -np.dot(alpha, pt) / (sign * beta)
    return float(np.sum(np.abs(pt) ** 2) + abs(p3) ** 2)


def diffraction_efficiencies(above: RayleighSpectrum, below: RayleighSpectrum, wave, media) -> Efficiencies:
    """Reflected and transmitted efficiencies of the propagating orders.

    Tangential amplitudes of the scattered waves are read from the spectra
    (the incident mode is removed above), completed by transversality, and
    weighted by the vertical energy flux ``Re(beta) |p|^2 / mu``, normalized
    by the incident flux. Transmitted fluxes are taken on the lower plane, so
    a lossy substrate reports the energy that actually reaches it.
    """
    top, bottom = media
    omega = wave.omega
    beta = wave.beta
    inc = beta * _full_amplitude_sq(wave.alpha, wave.p[:2], beta, -1) / top.mu
    R, T = {}, {}
    b1 = vertical_wavenumbers(top.kappa_sq(omega), above.alphas)
    prop1 = np.einsum("ij,ij->i", above.alphas, above.alphas) < top.kappa_sq(omega).real
    for i, n in enumerate(above.indices):
        if not prop1[i]:
            continue
        pt = above.coeffs[i, :2].copy()
        if tuple(n) == (0, 0):
            pt -= wave.p[:2] * np.exp(-1j * beta * above.x3)
        pt *= np.exp(-1j * b1[i] * above.x3)
        R[tuple(int(v) for v in n)] = b1[i].real * _full_amplitude_sq(above.alphas[i], pt, b1[i], +1) / top.mu / inc
    b2 = vertical_wavenumbers(bottom.kappa_sq(omega), below.alphas)
    prop2 = np.einsum("ij,ij->i", below.alphas, below.alphas) < bottom.kappa_sq(omega).real
    for i, n in enumerate(below.indices):
        if not prop2[i]:
            continue
        # flux through the extraction plane itself, so absorption between the
        # structure and b2 is counted as loss
        pt = below.coeffs[i, :2]
        T[tuple(int(v) for v in n)] = b2[i].real * _full_amplitude_sq(below.alphas[i], pt, b2[i], -1) / bottom.mu / inc
    return Efficiencies(R, T)


def exact_efficiencies(sol: ExactFlatSolution) -> Efficiencies:
    """``R_0 = |r|^2`` and ``T_0 = |t|^2 Re(b2) mu1 / (b1 mu2)``."""
    R0 = abs(sol.r) ** 2
    T0 = abs(sol.t) ** 2 * sol.beta2.real * sol.top.mu / (sol.beta1.real * sol.bottom.mu)
    return Efficiencies({(0, 0): R0}, {(0, 0): T0})


def slope_fit(dofs, values, last=None) -> float:
    """Least-squares slope of ``log(values)`` against ``log(dofs)``."""
    x = np.log(np.asarray(dofs, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if last is not None:
        x, y = x[-last:], y[-last:]
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])
