"""Simplex quadrature rules of arbitrary degree.

Rules are collapsed (Duffy) tensor products of Gauss-Jacobi rules, which keeps
them positive and exact for polynomials of total degree ``2m - 1`` with ``m``
points per direction. Composite versions subdivide the reference simplex
uniformly and are used for oscillatory integrands.
"""

from functools import lru_cache
import math

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_FACE_DEGREE = 20


def _jacobi01(m, a):
    """Gauss-Jacobi nodes/weights on [0, 1] for weight (1 - u)**a."""
    t, w = roots_jacobi(m, a, 0) if a else roots_legendre(m)
    return (1.0 + t) / 2.0, w / 2.0 ** (a + 1)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Rule on the reference triangle (0,0), (1,0), (0,1).

    Returns:
        ``(points, weights)`` with points of shape ``(nq, 2)``; weights sum to 1/2.
    """
    m = max(1, math.ceil((degree + 1) / 2))
    u, wu = _jacobi01(m, 1)
    v, wv = _jacobi01(m, 0)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([U.ravel(), ((1.0 - U) * V).ravel()], axis=1)
    w = np.outer(wu, wv).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def tetrahedron_rule(degree):
    """Rule on the reference tetrahedron; weights sum to 1/6."""
    m = max(1, math.ceil((degree + 1) / 2))
    u, wu = _jacobi01(m, 2)
    v, wv = _jacobi01(m, 1)
    s, ws = _jacobi01(m, 0)
    U, V, S = np.meshgrid(u, v, s, indexing="ij")
    pts = np.stack(
        [U.ravel(), ((1 - U) * V).ravel(), ((1 - U) * (1 - V) * S).ravel()], axis=1
    )
    w = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def _split_triangle(tri):
    a, b, c = tri
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]


def _split_tet(tet):
    a, b, c, d = tet
    ab, ac, ad = (a + b) / 2, (a + c) / 2, (a + d) / 2
    bc, bd, cd = (b + c) / 2, (b + d) / 2, (c + d) / 2
    return [
        np.array(t)
        for t in (
            (a, ab, ac, ad), (ab, b, bc, bd), (ac, bc, c, cd), (ad, bd, cd, d),
            (ab, ac, ad, bd), (ab, ac, bc, bd), (ac, ad, bd, cd), (ac, bc, bd, cd),
        )
    ]


@lru_cache(maxsize=None)
def composite_triangle_rule(degree, levels):
    """``triangle_rule(degree)`` repeated on the ``4**levels`` uniform sub-triangles."""
    pts, w = triangle_rule(degree)
    tris = [np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])]
    for _ in range(levels):
        tris = [s for t in tris for s in _split_triangle(t)]
    out_p, out_w = [], []
    for t in tris:
        jac = abs(np.linalg.det(np.stack([t[1] - t[0], t[2] - t[0]])))
        out_p.append(t[0] + pts @ np.stack([t[1] - t[0], t[2] - t[0]]))
        out_w.append(w * jac)
    P, W = np.concatenate(out_p), np.concatenate(out_w)
    P.setflags(write=False)
    W.setflags(write=False)
    return P, W


@lru_cache(maxsize=None)
def composite_tetrahedron_rule(degree, levels):
    pts, w = tetrahedron_rule(degree)
    ref = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    tets = [ref]
    for _ in range(levels):
        tets = [s for t in tets for s in _split_tet(t)]
    out_p, out_w = [], []
    for t in tets:
        J = (t[1:] - t[0])
        out_p.append(t[0] + pts @ J)
        out_w.append(w * abs(np.linalg.det(J)))
    P, W = np.concatenate(out_p), np.concatenate(out_w)
    P.setflags(write=False)
    W.setflags(write=False)
    return P, W


def oscillatory_face_rule(kh):
    """Pick ``(degree, levels)`` for a face of diameter h against frequency k.

    Degree is ``2 + ceil(1.5 k h)`` capped at ``MAX_FACE_DEGREE``; beyond the
    cap the face is virtually subdivided until the per-piece degree fits.
    """
    levels = 0
    while 2 + math.ceil(1.5 * kh / 2**levels) > MAX_FACE_DEGREE:
        levels += 1
    return 2 + math.ceil(1.5 * kh / 2**levels), levels


def grouped_face_rules(kh):
    """Group faces by the rule chosen for each ``kh`` value.

    Returns:
        dict mapping ``(degree, levels)`` to an index array into ``kh``.
    """
    kh = np.asarray(kh, dtype=float)
    keys = [oscillatory_face_rule(v) for v in kh]
    groups = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    return {k: np.asarray(v, dtype=int) for k, v in groups.items()}
