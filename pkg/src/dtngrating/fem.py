"""Lowest-order Nedelec (Whitney) edge elements with quasi-periodic DOFs.

Quasi-periodicity is imposed by eliminating the edges on ``x1 = L1`` and
``x2 = L2`` in favor of their translates on the opposite faces, with the Bloch
phase ``exp(i (alpha1 L1 s1 + alpha2 L2 s2))``. Assembled rows are test
functions (conjugated), columns are trial functions, so the volume matrix is
``P^H K P`` with ``K`` the unreduced edge matrix.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from dtngrating.errors import ConfigError, DegenerateElementError, OutOfDomainError
from dtngrating.mesh import LOCAL_EDGES, PeriodicMesh

_EA, _EB = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]


def barycentric_coefficients(P):
    """Affine barycentric maps of tets ``P`` (n, 4, 3).

    Returns:
        ``(c, g, vol)`` so that ``lambda_i(x) = c[:, i] + g[:, i] . x``.
    """
    P = np.asarray(P, dtype=float)
    T = np.concatenate([np.ones(P.shape[:2] + (1,)), P], axis=2)
    vol = np.abs(np.linalg.det(T)) / 6.0
    inv = np.linalg.inv(T)  # column i -> (c_i, g_i)
    return inv[:, 0, :], np.transpose(inv[:, 1:, :], (0, 2, 1)), vol


def _check_volumes(P, vol):
    d = P[:, LOCAL_EDGES[:, 0]] - P[:, LOCAL_EDGES[:, 1]]
    h = np.sqrt((d**2).sum(-1)).max(axis=1)
    bad = vol < 1e-14 * h**3
    if bad.any():
        raise DegenerateElementError(f"{int(bad.sum())} degenerate elements")


def element_matrices_batch(P, eps, mu):
    """Unit-coefficient curl-curl and mass matrices of Whitney functions.

    Local edge ``k = (a, b)`` carries ``lambda_a grad(lambda_b) - lambda_b grad(lambda_a)``.

    Args:
        P: vertex coordinates ``(n, 4, 3)``.
        eps, mu: per-element coefficients (scalars or ``(n,)``).

    Returns:
        ``(S, M)`` of shape ``(n, 6, 6)``: ``S = int mu^-1 curl.curl``, ``M = int eps phi.phi``.
    """
    P = np.asarray(P, dtype=float)
    _, g, vol = barycentric_coefficients(P)
    _check_volumes(P, vol)
    curls = 2.0 * np.cross(g[:, _EA], g[:, _EB])  # (n, 6, 3)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), vol.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=complex), vol.shape)
    S = np.einsum("nki,nli->nkl", curls, curls) * (vol / mu)[:, None, None]
    GG = np.einsum("nai,nbi->nab", g, g)
    a, b = _EA[:, None], _EB[:, None]
    c, d = _EA[None, :], _EB[None, :]

    def m(i, j):
        return 1.0 + (i == j)

    M = (
        m(a, c) * GG[:, b, d] - m(a, d) * GG[:, b, c]
        - m(b, c) * GG[:, a, d] + m(b, d) * GG[:, a, c]
    ) * (vol / 20.0)[:, None, None]
    return S, M * eps[:, None, None]


def element_matrices(tet, eps, mu, omega=None):
    """Curl-curl and (eps-weighted) mass matrices of a single tetrahedron."""
    S, M = element_matrices_batch(np.asarray(tet, dtype=float)[None], eps, mu)
    return S[0], M[0]


@dataclasses.dataclass(frozen=True)
class DofMap:
    """Edge-to-DOF map after quasi-periodic identification.

    Attributes:
        edge_dof: DOF of every global edge.
        edge_coef: factor with ``u_edge = edge_coef * U[edge_dof]`` (phase times orientation).
        master_edges: the edge carrying each DOF.
        elem_dof, elem_coef: per element and local edge, composed with the local orientation.
    """

    mesh: PeriodicMesh
    alpha: tuple
    edge_dof: np.ndarray
    edge_coef: np.ndarray
    master_edges: np.ndarray
    elem_dof: np.ndarray
    elem_coef: np.ndarray

    @property
    def ndof(self) -> int:
        return len(self.master_edges)

    @cached_property
    def P(self) -> sp.csr_matrix:
        """Sparse ``(n_edges, ndof)`` map from DOFs to edge values."""
        ne = len(self.edge_dof)
        return sp.csr_matrix(
            (self.edge_coef, (np.arange(ne), self.edge_dof)), shape=(ne, self.ndof)
        )


def build_dofmap(mesh: PeriodicMesh, alpha) -> DofMap:
    alpha = np.asarray(alpha, dtype=float)
    s = mesh.scene
    E = mesh.edges
    X = mesh.vertices[E]  # (nE, 2, 3)
    tol1, tol2 = 1e-12 * s.L1, 1e-12 * s.L2
    s1 = np.all(np.abs(X[:, :, 0] - s.L1) <= tol1, axis=1)
    s2 = np.all(np.abs(X[:, :, 1] - s.L2) <= tol2, axis=1)
    slave = s1 | s2
    shift = np.zeros((len(E), 3))
    shift[:, 0] = s1 * s.L1
    shift[:, 1] = s2 * s.L2
    sl = np.flatnonzero(slave)
    img = mesh.find_vertices((X[sl] - shift[sl, None, :]).reshape(-1, 3)).reshape(-1, 2)
    if (img < 0).any():
        raise ConfigError("mesh is not periodic: missing image vertex")
    master_of = mesh.edge_ids(img[:, 0], img[:, 1])
    if (master_of < 0).any():
        raise ConfigError("mesh is not periodic: missing image edge")
    if slave[master_of].any():
        raise ConfigError("periodic image of a slave edge is itself a slave")
    masters = np.flatnonzero(~slave)
    edge_dof = np.empty(len(E), dtype=np.int64)
    edge_dof[masters] = np.arange(len(masters))
    edge_dof[sl] = edge_dof[master_of]
    edge_coef = np.ones(len(E), dtype=complex)
    orient = np.where(img[:, 0] < img[:, 1], 1.0, -1.0)
    phase = np.exp(1j * (alpha[0] * s.L1 * s1[sl] + alpha[1] * s.L2 * s2[sl]))
    edge_coef[sl] = orient * phase
    elem_dof = edge_dof[mesh.tet_edges]
    elem_coef = mesh.tet_edge_sign * edge_coef[mesh.tet_edges]
    for arr in (edge_dof, edge_coef, masters, elem_dof, elem_coef):
        arr.setflags(write=False)
    return DofMap(mesh, tuple(alpha), edge_dof, edge_coef, masters, elem_dof, elem_coef)


def element_coefficients(mesh: PeriodicMesh):
    eps = np.array([m.eps for m in mesh.scene.materials], dtype=complex)[mesh.material]
    mu = np.array([m.mu for m in mesh.scene.materials], dtype=float)[mesh.material]
    return eps, mu


def scatter(dofmap: DofMap, Kloc) -> sp.csr_matrix:
    """Assemble per-element 6x6 blocks: ``A[i, j] += conj(c_k) K[k, l] c_l``."""
    c = dofmap.elem_coef
    vals = np.conj(c)[:, :, None] * Kloc * c[:, None, :]
    rows = np.repeat(dofmap.elem_dof[:, :, None], 6, axis=2)
    cols = np.repeat(dofmap.elem_dof[:, None, :], 6, axis=1)
    n = dofmap.ndof
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def assemble_volume(mesh: PeriodicMesh, dofmap: DofMap, omega: float, parts=False):
    """Volume part ``int mu^-1 curl u . curl conj(v) - omega^2 int eps u . conj(v)``.

    With ``parts=True`` returns the curl-curl and mass matrices separately.
    """
    eps, mu = element_coefficients(mesh)
    S, M = element_matrices_batch(mesh.vertices[mesh.tets], eps, mu)
    if parts:
        return scatter(dofmap, S), scatter(dofmap, M)
    return scatter(dofmap, S - omega**2 * M)


class DiscreteField:
    """Edge-element field ``E_h`` (``a_T + b_T x x`` on every element)."""

    def __init__(self, dofmap: DofMap, coeffs):
        self.dofmap = dofmap
        self.mesh = dofmap.mesh
        self.coeffs = np.asarray(coeffs, dtype=complex)
        if self.coeffs.shape != (dofmap.ndof,):
            raise ValueError("coefficient vector does not match the DOF count")

    @cached_property
    def local(self) -> np.ndarray:
        """Coefficients of the local Whitney functions, shape ``(ne, 6)``."""
        return self.dofmap.elem_coef * self.coeffs[self.dofmap.elem_dof]

    @cached_property
    def affine(self):
        """``(a, b)`` with ``E|_T(x) = a_T + b_T x x``."""
        c, g, _ = _bary(self.mesh)
        u = self.local
        b = np.einsum("nk,nki->ni", u, np.cross(g[:, _EA], g[:, _EB]))
        a = np.einsum(
            "nk,nki->ni", u,
            c[:, _EA, None] * g[:, _EB] - c[:, _EB, None] * g[:, _EA],
        )
        return a, b

    @property
    def curl(self) -> np.ndarray:
        """Element-wise constant curl ``2 b_T``."""
        return 2.0 * self.affine[1]

    def values_in(self, elements, x):
        """Field of element ``elements[i]`` at ``x[i]`` (point may lie outside it)."""
        a, b = self.affine
        return a[elements] + np.cross(b[elements], x)

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.values_in(locate(self.mesh, x), x)

    def evaluate_curl(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.curl[locate(self.mesh, x)]

    def l2_norms(self) -> np.ndarray:
        """Per-element ``||E_h||_{L2(T)}`` from the exact mass matrix."""
        _, M = _unit_mass(self.mesh)
        u = self.local
        return np.sqrt(np.maximum(np.einsum("nk,nkl,nl->n", np.conj(u), M, u).real, 0.0))


def evaluate_field(field: DiscreteField, x):
    return field.evaluate(x)


def evaluate_curl(field: DiscreteField, x):
    return field.evaluate_curl(x)


_BARY_CACHE = "_dtngrating_bary"


def _bary(mesh):
    cached = mesh.__dict__.get(_BARY_CACHE)
    if cached is None:
        cached = barycentric_coefficients(mesh.vertices[mesh.tets])
        mesh.__dict__[_BARY_CACHE] = cached
    return cached


def _unit_mass(mesh):
    cached = mesh.__dict__.get("_dtngrating_mass")
    if cached is None:
        cached = element_matrices_batch(mesh.vertices[mesh.tets], 1.0, 1.0)
        mesh.__dict__["_dtngrating_mass"] = cached
    return cached


def locate(mesh: PeriodicMesh, x, tol=1e-10) -> np.ndarray:
    """Index of an element containing each point of ``x``.

    Raises:
        OutOfDomainError: for points outside the cell.
    """
    s = mesh.scene
    x = np.atleast_2d(np.asarray(x, dtype=float))
    ext = max(s.L1, s.L2, s.b1 - s.b2)
    lo = np.array([0.0, 0.0, s.b2]) - tol * ext
    hi = np.array([s.L1, s.L2, s.b1]) + tol * ext
    if np.any(x < lo) or np.any(x > hi):
        raise OutOfDomainError("point outside the computational cell")
    tree = mesh.__dict__.get("_dtngrating_tree")
    if tree is None:
        tree = cKDTree(mesh.centroids)
        mesh.__dict__["_dtngrating_tree"] = tree
    c, g, _ = _bary(mesh)
    k = min(24, mesh.n_elements)
    _, cand = tree.query(x, k=k)
    cand = np.asarray(cand).reshape(len(x), k)
    lam = c[cand] + np.einsum("pkij,pj->pki", g[cand], x)
    inside = lam.min(axis=2) >= -tol
    out = np.full(len(x), -1, dtype=np.int64)
    found = inside.any(axis=1)
    out[found] = cand[found, inside[found].argmax(axis=1)]
    for i in np.flatnonzero(~found):
        lam_all = c + np.einsum("nij,j->ni", g, x[i])
        out[i] = int(np.argmax(lam_all.min(axis=1)))
    return out


def interpolate(dofmap: DofMap, func, npts: int = 8) -> DiscreteField:
    """Edge interpolant: ``U = int_e f . t ds`` on the master edges.

    Args:
        func: callable mapping points ``(n, 3)`` to complex vectors ``(n, 3)``.
    """
    mesh = dofmap.mesh
    E = mesh.edges[dofmap.master_edges]
    A, B = mesh.vertices[E[:, 0]], mesh.vertices[E[:, 1]]
    t, w = np.polynomial.legendre.leggauss(npts)
    s, w = (t + 1) / 2, w / 2
    pts = A[:, None, :] + s[None, :, None] * (B - A)[:, None, :]
    vals = np.asarray(func(pts.reshape(-1, 3)), dtype=complex).reshape(len(E), npts, 3)
    U = np.einsum("eqi,q,ei->e", vals, w, B - A)
    return DiscreteField(dofmap, U)


def assemble_rhs(dofmap: DofMap, wave, modeset, trace=None) -> np.ndarray:
    """Incident-wave functional ``-2 i omega int_G1 T1 E^inc . conj(phi_i)``.

    The incident field is the single Rayleigh mode ``n = 0``, so the
    functional is one trace-mode vector contracted with ``C_0 p_hat``.

    Args:
        trace: optional precomputed :class:`~dtngrating.dtn.TraceModeMatrix` for
            boundary 1 containing the mode ``(0, 0)``.
    """
    from dtngrating import dtn

    idx = modeset.zero_index(1)
    if idx is None:
        raise ConfigError("incident mode (0, 0) is not in the truncated mode set")
    mesh = dofmap.mesh
    f = np.zeros(dofmap.ndof, dtype=complex)
    p = wave.p
    if not np.any(p):
        return f
    if trace is None:
        dofs, V = dtn.trace_mode_vectors(mesh, dofmap, 1, np.asarray(wave.alpha)[None, :])
        V0 = V[0]
    else:
        dofs, V0 = trace.dofs, trace.V[idx]
    C0 = modeset.capacity_matrices(1)[idx]
    p_hat = p[:2] * np.exp(-1j * wave.beta * mesh.scene.b1)
    L12 = mesh.L1 * mesh.L2
    f[dofs] = -2j * wave.omega * L12 * (np.conj(V0).T @ (C0 @ p_hat))
    return f
