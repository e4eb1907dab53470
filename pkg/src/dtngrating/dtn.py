"""Truncated DtN (capacity operator) boundary coupling on the planes x3 = b_j.

A boundary field is reduced to its Rayleigh coefficients by projecting the
Whitney traces onto ``exp(i alpha_n . x)``; the truncated operator acts
mode-by-mode through 2x2 capacity matrices ``C_n``. By Parseval the boundary
term becomes the low-rank block

    B = -i omega L1 L2 sum_n V_n^H C_n V_n,

where row ``V_n[c]`` holds component ``c`` of the (1/(L1 L2)-normalized)
Fourier coefficient of every boundary basis function.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from dtngrating.mesh import GAMMA1, GAMMA2, PeriodicMesh
from dtngrating.quadrature import composite_triangle_rule, grouped_face_rules

_CHUNK = 1 << 21
# face-local edges over the sorted vertex triple (p < q < r)
_FACE_EDGES = np.array([(0, 1), (0, 2), (1, 2)])


def face_affine_2d(X):
    """Barycentric maps of horizontal triangles ``X`` (nf, 3, 3) in (x1, x2).

    Returns:
        ``(c, g)`` with ``lambda_i = c[:, i] + g[:, i] . (x1, x2)``.
    """
    T = np.concatenate([np.ones(X.shape[:2] + (1,)), X[:, :, :2]], axis=2)
    inv = np.linalg.inv(T)
    return inv[:, 0, :], np.transpose(inv[:, 1:, :], (0, 2, 1))


def face_quadrature(mesh: PeriodicMesh, faces, kmax: float):
    """Oscillation-aware quadrature on boundary faces, grouped by rule.

    Yields:
        ``(sub, lam, X, W)``: indices into ``faces``, reference barycentrics
        ``(nq, 3)``, physical points ``(nf, nq, 3)`` and weights ``(nf, nq)``.
    """
    faces = np.asarray(faces)
    kh = kmax * mesh.face_diameters[faces]
    for (deg, lev), sub in grouped_face_rules(kh).items():
        pts, w = composite_triangle_rule(deg, lev)
        lam = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
        V = mesh.vertices[mesh.faces[faces[sub]]]
        X = np.einsum("qa,fai->fqi", lam, V)
        W = 2.0 * mesh.face_areas[faces[sub]][:, None] * w[None, :]
        yield sub, lam, X, W


def mode_face_quadrature(mesh: PeriodicMesh, faces, alphas):
    """Face rules chosen per mode from ``|alpha_n| h_F``.

    The rule used for mode ``n`` on face ``F`` depends only on that pair, so a
    mode's projections do not change when other modes join the set.

    Yields:
        ``(msub, sub, lam, X, W)``: mode indices, face indices into ``faces``
        and the quadrature data of :func:`face_quadrature`.
    """
    faces = np.asarray(faces)
    kn = np.sqrt((np.asarray(alphas, dtype=float).reshape(-1, 2) ** 2).sum(1))
    if not len(kn) or not len(faces):
        return
    hq, inv = np.unique(np.round(mesh.face_diameters[faces], 12), return_inverse=True)
    for i, h in enumerate(hq):
        fsub = np.flatnonzero(inv == i)
        V = mesh.vertices[mesh.faces[faces[fsub]]]
        area = 2.0 * mesh.face_areas[faces[fsub]][:, None]
        for (deg, lev), msub in grouped_face_rules(kn * h).items():
            pts, w = composite_triangle_rule(deg, lev)
            lam = np.stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]], axis=1)
            X = np.einsum("qa,fai->fqi", lam, V)
            yield np.asarray(msub), fsub, lam, X, area * w[None, :]


def _whitney_face_values(lam, g):
    """Tangential Whitney traces on faces: ``(nf, nq, 3 edges, 2)``."""
    out = []
    for a, b in _FACE_EDGES:
        out.append(lam[None, :, a, None] * g[:, None, b, :] - lam[None, :, b, None] * g[:, None, a, :])
    return np.stack(out, axis=2)


def boundary_kind(j: int) -> int:
    return GAMMA1 if j == 1 else GAMMA2


def boundary_face_dofs(mesh, dofmap, j):
    """Faces on ``Gamma_j`` with their three edges' DOFs and coefficients."""
    faces = mesh.boundary_faces(boundary_kind(j))
    F = mesh.faces[faces]
    edges = mesh.edge_ids(F[:, _FACE_EDGES[:, 0]], F[:, _FACE_EDGES[:, 1]])
    return faces, dofmap.edge_dof[edges], dofmap.edge_coef[edges]


def trace_mode_vectors(mesh: PeriodicMesh, dofmap, j: int, alphas):
    """Fourier coefficients of all boundary basis traces on ``Gamma_j``.

    Args:
        alphas: lateral wavevectors ``(m, 2)`` of the requested modes.

    Returns:
        ``(dofs, V)`` with ``dofs`` the sorted boundary DOFs and ``V`` of shape
        ``(m, 2, nb)``: ``V[n, c, i] = (1/(L1 L2)) int phi_i . e_c exp(-i alpha_n . x)``.
    """
    alphas = np.asarray(alphas, dtype=float).reshape(-1, 2)
    faces, fdofs, fcoef = boundary_face_dofs(mesh, dofmap, j)
    dofs = np.unique(fdofs)
    bidx = np.searchsorted(dofs, fdofs)
    m = len(alphas)
    acc = np.zeros((len(dofs), 2, m), dtype=complex)
    for msub, sub, lam, X, W in mode_face_quadrature(mesh, faces, alphas):
        c, g = face_affine_2d(mesh.vertices[mesh.faces[faces[sub]]])
        nq, mm = lam.shape[0], len(msub)
        part = np.zeros((len(dofs), 2, mm), dtype=complex)
        step = max(1, _CHUNK // max(1, nq * mm))
        for s0 in range(0, len(sub), step):
            sl = slice(s0, s0 + step)
            B = _whitney_face_values(lam, g[sl])  # (f, q, 3, 2)
            ph = np.exp(-1j * (X[sl, :, :2] @ alphas[msub].T)) * W[sl, :, None]  # (f, q, mm)
            Wk = np.einsum("fqkc,fqm->fkcm", B, ph)
            Wk *= fcoef[sub[sl]][:, :, None, None]
            np.add.at(part, bidx[sub[sl]].ravel(), Wk.reshape(-1, 2, mm))
        acc[:, :, msub] += part
    V = np.transpose(acc, (2, 1, 0)) / (mesh.L1 * mesh.L2)
    return dofs, V


@dataclasses.dataclass(frozen=True)
class TraceModeMatrix:
    """Rank-structured DtN data for one boundary ``Gamma_j``."""

    j: int
    dofs: np.ndarray
    V: np.ndarray  # (m, 2, nb)
    C: np.ndarray  # (m, 2, 2)
    alphas: np.ndarray
    omega: float
    area: float

    @property
    def n_modes(self) -> int:
        return len(self.alphas)

    def coefficients(self, U) -> np.ndarray:
        """Rayleigh coefficients ``(m, 2)`` of the trace of the field ``U``."""
        return np.einsum("mci,i->mc", self.V, np.asarray(U)[self.dofs])

    def dense(self) -> np.ndarray:
        """``-i omega L1 L2 sum_n V_n^H C_n V_n`` on the boundary DOFs."""
        m, _, nb = self.V.shape
        CV = np.einsum("mab,mbi->mai", self.C, self.V).reshape(2 * m, nb)
        return -1j * self.omega * self.area * (np.conj(self.V.reshape(2 * m, nb)).T @ CV)

    def apply(self, u_b) -> np.ndarray:
        w = np.einsum("mci,i->mc", self.V, u_b)
        r = np.einsum("mab,mb->ma", self.C, w)
        return -1j * self.omega * self.area * np.einsum("mci,mc->i", np.conj(self.V), r)


@dataclasses.dataclass(frozen=True)
class DtnBlock:
    """Boundary coupling operator ``B`` over all DOFs, kept in factored form."""

    parts: tuple
    ndof: int

    def matvec(self, U) -> np.ndarray:
        U = np.asarray(U)
        y = np.zeros(self.ndof, dtype=complex)
        for t in self.parts:
            y[t.dofs] += t.apply(U[t.dofs])
        return y

    def dense_blocks(self):
        return [(t.dofs, t.dense()) for t in self.parts]

    def to_sparse(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for dofs, D in self.dense_blocks():
            rows.append(np.repeat(dofs, len(dofs)))
            cols.append(np.tile(dofs, len(dofs)))
            vals.append(D.ravel())
        if not rows:
            return sp.csr_matrix((self.ndof, self.ndof), dtype=complex)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.ndof, self.ndof),
        )

    def part(self, j: int) -> TraceModeMatrix:
        for t in self.parts:
            if t.j == j:
                return t
        raise KeyError(j)


def assemble_trace_modes(mesh, dofmap, modeset, j, adjoint=False) -> TraceModeMatrix:
    alphas = modeset.alphas(j)
    dofs, V = trace_mode_vectors(mesh, dofmap, j, alphas)
    C = modeset.capacity_matrices(j)
    if adjoint:
        med = modeset.medium(j)
        from dtngrating.quasi_fourier import capacity_matrices

        C = capacity_matrices(
            alphas, np.conj(modeset.betas(j)), np.conj(modeset.kappa_sq(j)),
            np.conj(med.mu), modeset.omega,
        )
    return TraceModeMatrix(j, dofs, V, C, alphas, modeset.omega, mesh.L1 * mesh.L2)


def assemble_dtn_block(mesh, dofmap, modeset, adjoint=False) -> DtnBlock:
    """DtN coupling on both boundaries for the truncated mode set."""
    parts = tuple(
        assemble_trace_modes(mesh, dofmap, modeset, j, adjoint=adjoint)
        for j in (1, 2) if len(modeset.modes(j))
    )
    return DtnBlock(parts, dofmap.ndof)


def dtn_quadratic_form(field, j, modeset, trace=None) -> complex:
    """``int_{Gamma_j} T_j^N(E_Gamma) . conj(E_Gamma)`` via the Rayleigh coefficients."""
    if trace is None:
        trace = assemble_trace_modes(field.mesh, field.dofmap, modeset, j)
    w = trace.coefficients(field.coeffs)
    r = np.einsum("mab,mb->ma", trace.C, w)
    return complex(trace.area * np.sum(r * np.conj(w)))


def synthesize(alphas, coeffs, x):
    """Evaluate ``sum_n coeffs[n] exp(i alpha_n . x)`` at lateral points ``x`` (..., 2)."""
    x = np.asarray(x, dtype=float)
    ph = np.exp(1j * (x @ np.asarray(alphas, dtype=float).T))
    return ph @ np.asarray(coeffs)
