"""Residual a posteriori error indicators and the DtN truncation term.

For lowest-order edge elements with elementwise constant ``eps`` and ``mu``,
``curl(mu^-1 curl E_h)`` and ``div(eps E_h)`` vanish on every element, so the
element residual is ``omega^2 eps E_h`` and the divergence residual is zero.
Face terms are integrated with simplex rules: jump integrands on interior and
periodic faces are at most quadratic, while the boundary residuals carry the
synthesized DtN traces and use the oscillation-aware face rule.

All face routines are vectorized over a face list and return ``L2(F)`` norms.
"""

from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np

from dtngrating import dtn
from dtngrating.errors import TruncationTooSmallError
from dtngrating.fem import DiscreteField, element_coefficients
from dtngrating.mesh import INTERIOR
from dtngrating.quadrature import triangle_rule

_CHUNK = 1 << 21


def _face_points(mesh, faces, degree):
    pts, w = triangle_rule(degree)
    lam = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
    X = np.einsum("qa,fai->fqi", lam, mesh.vertices[mesh.faces[faces]])
    W = 2.0 * mesh.face_areas[faces][:, None] * w[None, :]
    return X, W


def _norm_over(W, vals):
    """``sqrt(sum_q W |vals|^2)`` with vals ``(nf, nq)`` or ``(nf, nq, 3)``."""
    sq = np.abs(vals) ** 2
    if sq.ndim == 3:
        sq = sq.sum(-1)
    return np.sqrt((W * sq).sum(axis=1))


def element_residuals(field: DiscreteField, omega: float):
    """``(||R1||_T, ||R2||_T)`` for every element.

    ``R1 = omega^2 eps E_h`` since the curl of the (constant) curl vanishes,
    and ``R2 = -omega^2 div(eps E_h) = 0`` because ``div(a + b x x) = 0``.
    """
    eps, _ = element_coefficients(field.mesh)
    R1 = omega**2 * np.abs(eps) * field.l2_norms()
    return R1, np.zeros_like(R1)


def interior_jumps(field: DiscreteField, omega: float, faces=None):
    """Tangential curl jump and normal flux jump across interior faces.

    ``J1 = (mu1^-1 curl E|T1 - mu2^-1 curl E|T2) x nu`` and
    ``J2 = omega^2 (eps2 E|T2 - eps1 E|T1) . nu`` with ``nu`` pointing from T2
    to T1, where T1, T2 are ``face_tets[:, 0]``, ``face_tets[:, 1]``.

    Returns:
        ``(faces, ||J1||_F, ||J2||_F)``.
    """
    mesh = field.mesh
    if faces is None:
        faces = np.flatnonzero(mesh.face_kind == INTERIOR)
    faces = np.asarray(faces, dtype=np.int64)
    t1, t2 = mesh.face_tets[faces, 0], mesh.face_tets[faces, 1]
    nu = mesh.face_normals[faces]
    eps, mu = element_coefficients(mesh)
    curl = field.curl
    j1 = np.cross(curl[t1] / mu[t1, None] - curl[t2] / mu[t2, None], nu)
    J1 = np.linalg.norm(j1, axis=1) * np.sqrt(mesh.face_areas[faces])
    X, W = _face_points(mesh, faces, 2)
    a, b = field.affine
    E1 = a[t1][:, None, :] + np.cross(b[t1][:, None, :], X)
    E2 = a[t2][:, None, :] + np.cross(b[t2][:, None, :], X)
    flux = omega**2 * np.einsum(
        "fqi,fi->fq", eps[t2, None, None] * E2 - eps[t1, None, None] * E1, nu
    )
    return faces, J1, _norm_over(W, flux)


def periodic_jumps(field: DiscreteField, omega: float, direction: int):
    """Jumps across the quasi-periodic identification of the lateral faces.

    For a face F on ``x_l = 0`` (element T) and its partner F' on ``x_l = L_l``
    (element T'), with ``nu`` the outward normal of F,
    ``J1_F = (e^{-i a L} mu'^-1 curl E|T' - mu^-1 curl E|T) x nu`` and
    ``J2_F = omega^2 (eps E|T - e^{-i a L} eps' E|T'(x + L e_l)) . nu``.
    The partner residuals differ by the unimodular factor ``-e^{i a L}``, so
    the norms on F and F' coincide.

    Returns:
        ``(pairs, ||J1||, ||J2||)`` with ``pairs[:, 0]`` on ``x_l = 0``.
    """
    mesh = field.mesh
    s = mesh.scene
    pairs = mesh.periodic_face_pairs(direction)
    F, Fp = pairs[:, 0], pairs[:, 1]
    T, Tp = mesh.face_tets[F, 0], mesh.face_tets[Fp, 0]
    ax, L = (0, s.L1) if direction == 1 else (1, s.L2)
    phase = np.exp(-1j * field.dofmap.alpha[ax] * L)
    nu = mesh.face_normals[F]
    eps, mu = element_coefficients(mesh)
    curl = field.curl
    j1 = np.cross(phase * curl[Tp] / mu[Tp, None] - curl[T] / mu[T, None], nu)
    J1 = np.linalg.norm(j1, axis=1) * np.sqrt(mesh.face_areas[F])
    X, W = _face_points(mesh, F, 2)
    shift = np.zeros(3)
    shift[ax] = L
    a, b = field.affine
    E = a[T][:, None, :] + np.cross(b[T][:, None, :], X)
    Ep = a[Tp][:, None, :] + np.cross(b[Tp][:, None, :], X + shift)
    flux = omega**2 * np.einsum(
        "fqi,fi->fq", eps[T, None, None] * E - phase * eps[Tp, None, None] * Ep, nu
    )
    return pairs, J1, _norm_over(W, flux)


def boundary_residuals(
    field: DiscreteField, j: int, omega: float, trace: dtn.TraceModeMatrix, incident=None,
):
    """Residuals on the faces of ``Gamma_j`` (``nu_j = (0, 0, +-1)``).

    ``J1 = 2 [-(mu^-1 curl E_h) x nu + i omega T^N E_h - 2 i omega T E^inc]`` and
    ``J2 = 2 [omega^2 eps E_h . nu - i omega div T^N E_h + 2 i omega div T E^inc]``,
    where the incident terms only appear on ``Gamma_1``. ``T^N E_h`` is
    synthesized from the Rayleigh coefficients of the whole boundary trace.

    Args:
        trace: trace-mode data of boundary ``j`` (modes, capacity matrices).
        incident: ``(alpha, C0 p_hat)`` of the incident mode on ``Gamma_1``, or None.

    Returns:
        ``(faces, ||J1||_F, ||J2||_F)``.
    """
    mesh = field.mesh
    faces = mesh.boundary_faces(dtn.boundary_kind(j))
    tets = mesh.face_tets[faces, 0]
    nu = np.array([0.0, 0.0, 1.0 if j == 1 else -1.0])
    eps, mu = element_coefficients(mesh)
    a, b = field.affine
    curl = field.curl
    # tangential part of -(mu^-1 curl) x nu, constant per face
    base1 = -np.cross(curl[tets] / mu[tets, None], nu)[:, :2]
    R = np.einsum("mab,mb->ma", trace.C, trace.coefficients(field.coeffs))  # (m, 2)
    divR = 1j * np.einsum("ma,ma->m", trace.alphas, R)
    alphas = trace.alphas
    coefs = np.concatenate([R, divR[:, None]], axis=1)  # (m, 3)
    if incident is not None:
        a_inc, r_inc = incident
        alphas = np.vstack([alphas, np.asarray(a_inc, dtype=float)[None, :]])
        inc = -2.0 * np.concatenate([r_inc, [1j * np.dot(a_inc, r_inc)]])
        coefs = np.vstack([coefs, inc[None, :]])
    kmax = 2.0 * float(np.sqrt((alphas**2).sum(1)).max())
    J1 = np.zeros(len(faces))
    J2 = np.zeros(len(faces))
    for sub, _lam, X, W in dtn.face_quadrature(mesh, faces, kmax):
        nq = X.shape[1]
        step = max(1, _CHUNK // max(1, nq * len(alphas)))
        for s0 in range(0, len(sub), step):
            sl = slice(s0, s0 + step)
            idx = sub[sl]
            t = tets[idx]
            Xs = X[sl]
            syn = np.exp(1j * (Xs[:, :, :2] @ alphas.T)) @ coefs  # (f, q, 3)
            v1 = base1[idx][:, None, :] + 1j * omega * syn[:, :, :2]
            E = a[t][:, None, :] + np.cross(b[t][:, None, :], Xs)
            v2 = omega**2 * eps[t, None] * (E @ nu) - 1j * omega * syn[:, :, 2]
            J1[idx] = 2.0 * _norm_over(W[sl], v1)
            J2[idx] = 2.0 * _norm_over(W[sl], v2)
    return faces, J1, J2


def local_indicators(h, R1, R2, face_tets, face_sq):
    """``eta_T^2 = h_T^2 (R1^2 + R2^2) + h_T sum_F (J1^2 + J2^2)``.

    Args:
        h: element diameters.
        face_tets: ``(nf, 2)`` adjacent elements per face contribution (-1 for none).
        face_sq: ``||J1||^2 + ||J2||^2`` per face contribution.

    Returns:
        ``(eta_T, residual_part, jump_part)`` where the parts are the two squared terms.
    """
    h = np.asarray(h, dtype=float)
    res = h**2 * (np.asarray(R1) ** 2 + np.asarray(R2) ** 2)
    acc = np.zeros_like(h)
    face_tets = np.asarray(face_tets).reshape(len(face_sq), -1)
    for col in range(face_tets.shape[1]):
        t = face_tets[:, col]
        ok = t >= 0
        np.add.at(acc, t[ok], np.asarray(face_sq)[ok])
    jump = h * acc
    return np.sqrt(res + jump), res, jump


def min_truncation_order(kappa_sq, L1, L2) -> int:
    """Smallest ``M`` with ``(2 pi M / sqrt(L1 L2))^2 > Re kappa^2``."""
    k = math.sqrt(max(complex(kappa_sq).real, 0.0))
    return int(math.floor(k * math.sqrt(L1 * L2) / (2 * math.pi))) + 1


def sigma(N, kappa_sq, L1, L2) -> float:
    R = 2 * math.pi * N / math.sqrt(L1 * L2)
    d = R**2 - complex(kappa_sq).real
    if d <= 0:
        raise TruncationTooSmallError(f"N = {N} does not exceed the propagating cutoff")
    return math.sqrt(d)


def incident_trace_norm(wave, L1, L2) -> float:
    """``||E^inc||_{TL2(Gamma_1)} = sqrt(L1 L2) |(p1, p2)|``."""
    return math.sqrt(L1 * L2) * float(np.linalg.norm(wave.p[:2]))


def truncation_term(scene, wave, modeset):
    """``(t_1, t_2)`` with ``t_j = exp(-d_j sigma_j) ||E^inc||_{TL2(Gamma_1)}``.

    Raises:
        TruncationTooSmallError: if ``N_j < M_j``.
    """
    out = []
    nrm = incident_trace_norm(wave, scene.L1, scene.L2)
    for j in (1, 2):
        N = modeset.N(j)
        M = min_truncation_order(modeset.kappa_sq(j), scene.L1, scene.L2)
        if N < M:
            raise TruncationTooSmallError(f"N_{j} = {N} is below M_{j} = {M}")
        out.append(math.exp(-scene.d(j) * sigma(N, modeset.kappa_sq(j), scene.L1, scene.L2)) * nrm)
    return tuple(out)


@dataclasses.dataclass
class ErrorReport:
    eta_T: np.ndarray
    eta: float
    t1: float
    t2: float
    N1: int
    N2: int
    M1: int
    M2: int
    ndof: int
    residual_part: np.ndarray
    jump_part: np.ndarray
    true_error: float | None = None

    @property
    def total(self) -> float:
        """Computable bound ``eta + t_1 + t_2`` used as the stopping quantity."""
        return self.eta + self.t1 + self.t2

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "eta", "residual_sq", "jump_sq"])
            for i, (e, r, j) in enumerate(zip(self.eta_T, self.residual_part, self.jump_part)):
                w.writerow([i, repr(float(e)), repr(float(r)), repr(float(j))])


def incident_data(wave, modeset, scene):
    """``(alpha, C_0 p_hat)`` describing ``T_1 E^inc`` on ``Gamma_1``."""
    idx = modeset.zero_index(1)
    C0 = modeset.capacity_matrices(1)[idx]
    p_hat = wave.p[:2] * np.exp(-1j * wave.beta * scene.b1)
    return np.asarray(wave.alpha, dtype=float), C0 @ p_hat


def estimate(field: DiscreteField, wave, modeset, dtn_block=None) -> ErrorReport:
    """Local indicators ``eta_T`` and truncation terms for a solved field."""
    mesh = field.mesh
    scene = mesh.scene
    omega = wave.omega
    if dtn_block is None:
        dtn_block = dtn.assemble_dtn_block(mesh, field.dofmap, modeset)
    R1, R2 = element_residuals(field, omega)
    contrib_t, contrib_sq = [], []
    faces, J1, J2 = interior_jumps(field, omega)
    contrib_t.append(mesh.face_tets[faces])
    contrib_sq.append(J1**2 + J2**2)
    for direction in (1, 2):
        pairs, J1, J2 = periodic_jumps(field, omega, direction)
        sq = J1**2 + J2**2
        for col in (0, 1):
            t = mesh.face_tets[pairs[:, col], 0]
            contrib_t.append(np.stack([t, np.full_like(t, -1)], axis=1))
            contrib_sq.append(sq)
    inc = incident_data(wave, modeset, scene) if modeset.zero_index(1) is not None else None
    for j in (1, 2):
        faces, J1, J2 = boundary_residuals(
            field, j, omega, dtn_block.part(j), incident=inc if j == 1 else None
        )
        t = mesh.face_tets[faces, 0]
        contrib_t.append(np.stack([t, np.full_like(t, -1)], axis=1))
        contrib_sq.append(J1**2 + J2**2)
    eta_T, res, jump = local_indicators(
        mesh.tet_diameters, R1, R2, np.concatenate(contrib_t), np.concatenate(contrib_sq)
    )
    t1, t2 = truncation_term(scene, wave, modeset)
    M = [min_truncation_order(modeset.kappa_sq(j), scene.L1, scene.L2) for j in (1, 2)]
    return ErrorReport(
        eta_T, float(np.sqrt(np.sum(eta_T**2))), t1, t2, modeset.N1, modeset.N2, M[0], M[1],
        field.dofmap.ndof, res, jump,
    )
