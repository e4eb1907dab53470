"""Periodic tetrahedral meshes of the grating cell and their bisection refinement.

The initial mesh is a structured Kuhn triangulation (six tetrahedra per box)
whose grid lines are snapped to every material interface. Refinement is
Maubach's tagged newest-vertex bisection with conforming closure; an edge
split on a lateral face also forces the split of its periodic images, so the
surface meshes on opposite faces stay translates of each other.

``PeriodicMesh`` is an immutable snapshot. The mutable bisection state lives
in ``_Bisector`` and is cloned on every :func:`refine`.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from collections import deque
from functools import cached_property

import numpy as np

from dtngrating.errors import GeometryError
from dtngrating.quasi_fourier import MediumConstants

INTERIOR, GAMMA1, GAMMA2, X1LO, X1HI, X2LO, X2HI = range(7)
FACE_KIND_NAMES = ("interior", "gamma1", "gamma2", "x1lo", "x1hi", "x2lo", "x2hi")

LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
# face i is opposite local vertex i
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


@dataclasses.dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned box ``lo <= x <= hi`` filled with a homogeneous material."""

    lo: tuple
    hi: tuple
    eps: complex
    mu: float = 1.0

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((pts >= lo) & (pts <= hi), axis=-1)

    @property
    def medium(self):
        return MediumConstants(self.eps, self.mu)


@dataclasses.dataclass(frozen=True)
class GratingScene:
    """Grating unit cell ``(0,L1) x (0,L2) x (b2,b1)`` and its materials.

    Points not covered by any region belong to the top medium when
    ``x3 >= b1p`` and to the bottom medium when ``x3 <= b2p``. Regions are
    searched in order; the first match wins.
    """

    L1: float
    L2: float
    b1: float
    b2: float
    top: MediumConstants
    bottom: MediumConstants
    regions: tuple = ()
    b1p: float | None = None
    b2p: float | None = None
    d_fraction: float = 0.25
    name: str = ""

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0 and self.b1 > self.b2):
            raise GeometryError("need L1, L2 > 0 and b1 > b2")
        if self.top.eps.imag != 0:
            raise GeometryError("top medium must be lossless")
        object.__setattr__(self, "regions", tuple(self.regions))
        H = self.b1 - self.b2
        z_hi, z_lo = self._inhomogeneity_extent()
        if self.b1p is None:
            object.__setattr__(self, "b1p", max(self.b1 - self.d_fraction * H, z_hi))
        if self.b2p is None:
            object.__setattr__(self, "b2p", min(self.b2 + self.d_fraction * H, z_lo))
        if not (self.b2 < self.b2p < self.b1p < self.b1):
            raise GeometryError(
                f"need b2 < b2' < b1' < b1, got {self.b2}, {self.b2p}, {self.b1p}, {self.b1}"
            )
        for r in self.regions:
            if r.hi[2] > self.b1p and r.medium != self.top:
                raise GeometryError("region differs from the top medium above b1'")
            if r.lo[2] < self.b2p and r.medium != self.bottom:
                raise GeometryError("region differs from the bottom medium below b2'")

    def _inhomogeneity_extent(self):
        z_hi, z_lo = -math.inf, math.inf
        for r in self.regions:
            if r.medium != self.top:
                z_hi = max(z_hi, r.hi[2])
            if r.medium != self.bottom:
                z_lo = min(z_lo, r.lo[2])
        mid = 0.5 * (self.b1 + self.b2)
        return (z_hi if z_hi > -math.inf else mid), (z_lo if z_lo < math.inf else mid)

    @property
    def d1(self) -> float:
        return self.b1 - self.b1p

    @property
    def d2(self) -> float:
        return self.b2p - self.b2

    def d(self, j: int) -> float:
        return self.d1 if j == 1 else self.d2

    def medium(self, j: int) -> MediumConstants:
        return self.top if j == 1 else self.bottom

    @property
    def media(self):
        return (self.top, self.bottom)

    @cached_property
    def materials(self) -> tuple:
        """Distinct media; index 0 is the top medium and 1 the bottom one."""
        table = [self.top, self.bottom]
        for r in self.regions:
            if r.medium not in table:
                table.append(r.medium)
        return tuple(table)

    def material_index(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.full(len(pts), -1, dtype=int)
        for r in self.regions:
            hit = (out < 0) & r.contains(pts)
            out[hit] = self.materials.index(r.medium)
        free = out < 0
        out[free & (pts[:, 2] >= self.b1p)] = 0
        out[free & (pts[:, 2] <= self.b2p)] = 1
        if self.top == self.bottom:
            out[out < 0] = 0
        if (out < 0).any():
            raise GeometryError(f"point {pts[out < 0][0]} is not covered by any material")
        return out

    def grid_planes(self):
        """Breakpoints per axis that every mesh must honor."""
        planes = [{0.0, self.L1}, {0.0, self.L2}, {self.b2, self.b2p, self.b1p, self.b1}]
        bounds = [(0.0, self.L1), (0.0, self.L2), (self.b2, self.b1)]
        for r in self.regions:
            for ax in range(3):
                for v in (r.lo[ax], r.hi[ax]):
                    if bounds[ax][0] < v < bounds[ax][1]:
                        planes[ax].add(float(v))
        out = []
        for ax in range(3):
            p = np.array(sorted(planes[ax]))
            ext = bounds[ax][1] - bounds[ax][0]
            if np.any(np.diff(p) < 1e-9 * ext):
                raise GeometryError(f"material planes along axis {ax} are too close to resolve")
            out.append(p)
        return out


def _edge(a, b):
    return (a, b) if a < b else (b, a)


def _tet_volumes(P):
    """Signed-free volumes of tets given vertex coordinates ``(n, 4, 3)``."""
    J = P[:, 1:] - P[:, :1]
    return np.abs(np.linalg.det(J)) / 6.0


def dihedral_angles(P) -> np.ndarray:
    """All six dihedral angles (radians) of tets ``(n, 4, 3)``; shape ``(n, 6)``."""
    P = np.asarray(P, dtype=float)
    normals = []
    for f in LOCAL_FACES:
        a, b, c = P[:, f[0]], P[:, f[1]], P[:, f[2]]
        n = np.cross(b - a, c - a)
        normals.append(n / np.linalg.norm(n, axis=1, keepdims=True))
    N = np.stack(normals, axis=1)
    # faces i and j meet along the edge opposite to both; orient outward first
    centroid = P.mean(axis=1)
    for i, f in enumerate(LOCAL_FACES):
        outward = np.einsum("ij,ij->i", N[:, i], P[:, f[0]] - centroid)
        N[:, i] *= np.sign(outward)[:, None]
    out = []
    for i, j in itertools.combinations(range(4), 2):
        cosang = -np.einsum("ij,ij->i", N[:, i], N[:, j])
        out.append(np.arccos(np.clip(cosang, -1, 1)))
    return np.stack(out, axis=1)


class _Bisector:
    """Mutable Maubach bisection state with periodic closure."""

    def __init__(self, coords, tets, materials, L1, L2, scale):
        self.L1, self.L2 = L1, L2
        self.Q = 2.0**40 / scale
        self.coords = [tuple(map(float, c)) for c in coords]
        self.qc = [self._quant(c) for c in self.coords]
        self.vkey = {q: i for i, q in enumerate(self.qc)}
        self.qL1 = round(L1 * self.Q)
        self.qL2 = round(L2 * self.Q)
        self.tv = [tuple(int(v) for v in t) for t in tets]
        self.tag = [3] * len(tets)
        self.mat = [int(m) for m in materials]
        self.level = [0] * len(tets)
        self.parent = [-1] * len(tets)
        self.children = [None] * len(tets)
        self.alive = set(range(len(tets)))
        self.edge_tets = {}
        for t, vs in enumerate(self.tv):
            for a, b in LOCAL_EDGES:
                self.edge_tets.setdefault(_edge(vs[a], vs[b]), set()).add(t)
        self.mid = {}

    def _quant(self, c):
        return tuple(round(v * self.Q) for v in c)

    def clone(self) -> "_Bisector":
        new = object.__new__(_Bisector)
        new.__dict__.update(self.__dict__)
        for name in ("coords", "qc", "tv", "tag", "mat", "level", "parent", "children"):
            setattr(new, name, list(getattr(self, name)))
        new.vkey = dict(self.vkey)
        new.alive = set(self.alive)
        new.mid = dict(self.mid)
        new.edge_tets = {k: set(v) for k, v in self.edge_tets.items()}
        return new

    def partners(self, e):
        """Periodic images of edge ``e`` that exist as vertex pairs."""
        qa, qb = self.qc[e[0]], self.qc[e[1]]
        s1 = [0]
        if qa[0] == qb[0] == 0:
            s1.append(self.qL1)
        elif qa[0] == qb[0] == self.qL1:
            s1.append(-self.qL1)
        s2 = [0]
        if qa[1] == qb[1] == 0:
            s2.append(self.qL2)
        elif qa[1] == qb[1] == self.qL2:
            s2.append(-self.qL2)
        out = []
        for d1 in s1:
            for d2 in s2:
                if d1 == 0 and d2 == 0:
                    continue
                ia = self.vkey.get((qa[0] + d1, qa[1] + d2, qa[2]))
                ib = self.vkey.get((qb[0] + d1, qb[1] + d2, qb[2]))
                if ia is not None and ib is not None:
                    out.append(_edge(ia, ib))
        return out

    def _is_split(self, e):
        if e in self.mid:
            return True
        return any(p in self.mid for p in self.partners(e))

    def _midpoint(self, e):
        z = self.mid.get(e)
        if z is None:
            ca, cb = self.coords[e[0]], self.coords[e[1]]
            c = tuple(0.5 * (x + y) for x, y in zip(ca, cb))
            q = self._quant(c)
            z = self.vkey.get(q)
            if z is None:
                z = len(self.coords)
                self.coords.append(c)
                self.qc.append(q)
                self.vkey[q] = z
            self.mid[e] = z
        return z

    def _add_tet(self, vs, tag, mat, level, parent):
        t = len(self.tv)
        self.tv.append(vs)
        self.tag.append(tag)
        self.mat.append(mat)
        self.level.append(level)
        self.parent.append(parent)
        self.children.append(None)
        self.alive.add(t)
        for a, b in LOCAL_EDGES:
            self.edge_tets.setdefault(_edge(vs[a], vs[b]), set()).add(t)
        return t

    def _bisect(self, t, queue):
        vs, k = self.tv[t], self.tag[t]
        e = _edge(vs[0], vs[k])
        z = self._midpoint(e)
        self.alive.discard(t)
        for a, b in LOCAL_EDGES:
            ee = _edge(vs[a], vs[b])
            s = self.edge_tets[ee]
            s.discard(t)
            if not s:
                del self.edge_tets[ee]
        newtag = k - 1 if k > 1 else 3
        c1 = vs[:k] + (z,) + vs[k + 1:]
        c2 = vs[1:k + 1] + (z,) + vs[k + 1:]
        kids = tuple(
            self._add_tet(c, newtag, self.mat[t], self.level[t] + 1, t) for c in (c1, c2)
        )
        self.children[t] = kids
        queue.extend(self.edge_tets.get(e, ()))
        for pe in self.partners(e):
            queue.extend(self.edge_tets.get(pe, ()))
        for c in kids:
            cv = self.tv[c]
            if any(self._is_split(_edge(cv[a], cv[b])) for a, b in LOCAL_EDGES):
                queue.append(c)

    def refine(self, marked):
        queue = deque(marked)
        while queue:
            t = queue.popleft()
            if t in self.alive:
                self._bisect(t, queue)

    def leaves(self):
        return np.array(sorted(self.alive), dtype=int)


@dataclasses.dataclass(frozen=True)
class AuditReport:
    conforming: bool
    boundary_ok: bool
    periodic_ok: bool
    volume_ok: bool
    materials_ok: bool
    shape_ok: bool
    min_dihedral: float
    dihedral_bound: float
    messages: tuple = ()

    @property
    def ok(self) -> bool:
        return all(
            (self.conforming, self.boundary_ok, self.periodic_ok, self.volume_ok,
             self.materials_ok, self.shape_ok)
        )


class PeriodicMesh:
    """Immutable tetrahedral mesh of the grating cell with periodic pairing data.

    Element ``i`` of the snapshot is tetrahedron ``tets[i]`` (Maubach vertex
    order) with material index ``material[i]`` into ``scene.materials``.
    """

    def __init__(self, scene: GratingScene, engine: _Bisector, dihedral_bound: float):
        self.scene = scene
        self._engine = engine
        self.dihedral_bound = dihedral_bound
        self.leaf_ids = engine.leaves()
        self.vertices = np.array(engine.coords, dtype=float)
        self.tets = np.array([engine.tv[t] for t in self.leaf_ids], dtype=np.int64).reshape(-1, 4)
        self.material = np.array([engine.mat[t] for t in self.leaf_ids], dtype=int)
        self.level = np.array([engine.level[t] for t in self.leaf_ids], dtype=int)
        self.tags = np.array([engine.tag[t] for t in self.leaf_ids], dtype=int)
        for arr in (self.vertices, self.tets, self.material, self.level, self.tags, self.leaf_ids):
            arr.setflags(write=False)

    def __repr__(self):
        return f"PeriodicMesh({self.n_elements} tets, {self.n_vertices} vertices)"

    @property
    def n_elements(self) -> int:
        return len(self.tets)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def L1(self):
        return self.scene.L1

    @property
    def L2(self):
        return self.scene.L2

    # -- topology -------------------------------------------------------

    @cached_property
    def _edge_data(self):
        pairs = self.tets[:, LOCAL_EDGES]  # (ne, 6, 2)
        lo = np.minimum(pairs[..., 0], pairs[..., 1])
        hi = np.maximum(pairs[..., 0], pairs[..., 1])
        keys = lo * self.n_vertices + hi
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        edges = np.stack([uniq // self.n_vertices, uniq % self.n_vertices], axis=1)
        sign = np.where(pairs[..., 0] < pairs[..., 1], 1, -1)
        return edges, inv.reshape(-1, 6), sign, uniq

    @property
    def edges(self) -> np.ndarray:
        """Global edges ``(n_edges, 2)`` oriented from lower to higher vertex id."""
        return self._edge_data[0]

    @property
    def tet_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def tet_edge_sign(self) -> np.ndarray:
        """+1 where the local edge (a, b) agrees with the global orientation."""
        return self._edge_data[2]

    def edge_ids(self, a, b) -> np.ndarray:
        """Look up global edge ids for vertex pairs; -1 where absent."""
        a, b = np.asarray(a), np.asarray(b)
        keys = np.minimum(a, b) * self.n_vertices + np.maximum(a, b)
        uniq = self._edge_data[3]
        pos = np.searchsorted(uniq, keys)
        pos = np.clip(pos, 0, len(uniq) - 1)
        return np.where(uniq[pos] == keys, pos, -1)

    @cached_property
    def _face_data(self):
        tri = np.sort(self.tets[:, LOCAL_FACES], axis=2)  # (ne, 4, 3)
        nv = self.n_vertices
        keys = (tri[..., 0] * nv + tri[..., 1]) * nv + tri[..., 2]
        uniq, first, inv, counts = np.unique(
            keys.ravel(), return_index=True, return_inverse=True, return_counts=True
        )
        faces = tri.reshape(-1, 3)[first]
        inv = inv.reshape(-1, 4)
        face_tets = np.full((len(uniq), 2), -1, dtype=np.int64)
        flat_t = np.repeat(np.arange(self.n_elements), 4)
        order = np.argsort(inv.ravel(), kind="stable")
        sorted_faces = inv.ravel()[order]
        starts = np.searchsorted(sorted_faces, np.arange(len(uniq)))
        face_tets[:, 0] = flat_t[order[starts]]
        two = counts >= 2
        face_tets[two, 1] = flat_t[order[starts[two] + 1]]
        return faces, inv, face_tets, counts

    @property
    def faces(self) -> np.ndarray:
        return self._face_data[0]

    @property
    def tet_faces(self) -> np.ndarray:
        """Face ids ``(ne, 4)``; face ``i`` is opposite local vertex ``i``."""
        return self._face_data[1]

    @property
    def face_tets(self) -> np.ndarray:
        """Adjacent elements ``(n_faces, 2)``; -1 marks the missing side."""
        return self._face_data[2]

    @cached_property
    def face_kind(self) -> np.ndarray:
        s = self.scene
        X = self.vertices[self.faces]  # (nf, 3, 3)
        tol = 1e-12 * max(s.L1, s.L2, s.b1 - s.b2)
        kind = np.full(len(X), INTERIOR, dtype=int)
        bnd = self.face_tets[:, 1] < 0
        tests = (
            (GAMMA1, 2, s.b1), (GAMMA2, 2, s.b2), (X1LO, 0, 0.0),
            (X1HI, 0, s.L1), (X2LO, 1, 0.0), (X2HI, 1, s.L2),
        )
        for code, ax, val in tests:
            on = np.all(np.abs(X[:, :, ax] - val) <= tol, axis=1) & bnd
            kind[on] = code
        return kind

    def boundary_faces(self, kind: int) -> np.ndarray:
        return np.flatnonzero(self.face_kind == kind)

    # -- geometry -------------------------------------------------------

    @cached_property
    def tet_volumes(self) -> np.ndarray:
        return _tet_volumes(self.vertices[self.tets])

    @cached_property
    def tet_diameters(self) -> np.ndarray:
        """Longest edge of each element (``h_T``)."""
        P = self.vertices[self.tets]
        d = P[:, LOCAL_EDGES[:, 0]] - P[:, LOCAL_EDGES[:, 1]]
        return np.sqrt((d**2).sum(-1)).max(axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    @cached_property
    def face_areas(self) -> np.ndarray:
        X = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)

    @cached_property
    def face_diameters(self) -> np.ndarray:
        X = self.vertices[self.faces]
        d = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0], X[:, 2] - X[:, 1]], axis=1)
        return np.sqrt((d**2).sum(-1)).max(axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normals; on the boundary they point out of the domain,
        inside they point from ``face_tets[:, 1]`` into ``face_tets[:, 0]``."""
        X = self.vertices[self.faces]
        n = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        c0 = self.centroids[self.face_tets[:, 0]]
        # orient away from tet 0 first, then flip interior normals toward tet 0
        away = np.einsum("ij,ij->i", n, X[:, 0] - c0) < 0
        n[away] *= -1
        interior = self.face_tets[:, 1] >= 0
        n[interior] *= -1
        return n

    def face_geometry(self, face: int):
        """Area, diameter, unit normal and vertex coordinates of one face."""
        return (
            float(self.face_areas[face]),
            float(self.face_diameters[face]),
            self.face_normals[face].copy(),
            self.vertices[self.faces[face]].copy(),
        )

    # -- periodic pairing -------------------------------------------------

    def _qkey(self, X):
        Q = self._engine.Q
        return [tuple(int(round(v * Q)) for v in x) for x in X]

    @cached_property
    def _vertex_lookup(self):
        s = self.scene
        tol = 1e-12 * max(s.L1, s.L2)
        V = self.vertices
        on = (
            (np.abs(V[:, 0]) <= tol) | (np.abs(V[:, 0] - s.L1) <= tol)
            | (np.abs(V[:, 1]) <= tol) | (np.abs(V[:, 1] - s.L2) <= tol)
        )
        ids = np.flatnonzero(on)
        return dict(zip(self._qkey(V[ids]), ids.tolist()))

    def find_vertices(self, X) -> np.ndarray:
        """Ids of lateral-boundary vertices at coordinates ``X``; -1 if absent."""
        lookup = self._vertex_lookup
        return np.array([lookup.get(k, -1) for k in self._qkey(np.atleast_2d(X))], dtype=np.int64)

    def periodic_vertex_pairs(self, direction: int) -> np.ndarray:
        """``(k, 2)`` array of (vertex on x_l = 0, image on x_l = L_l)."""
        s = self.scene
        ax, L = (0, s.L1) if direction == 1 else (1, s.L2)
        tol = 1e-12 * L
        lo = np.flatnonzero(np.abs(self.vertices[:, ax]) <= tol)
        shift = np.zeros(3)
        shift[ax] = L
        hi = self.find_vertices(self.vertices[lo] + shift)
        return np.stack([lo, hi], axis=1)

    def periodic_face_pairs(self, direction: int) -> np.ndarray:
        """``(k, 2)`` array of (face on x_l = 0, partner face on x_l = L_l)."""
        lo_kind, hi_kind = (X1LO, X1HI) if direction == 1 else (X2LO, X2HI)
        ax, L = (0, self.scene.L1) if direction == 1 else (1, self.scene.L2)
        lo = self.boundary_faces(lo_kind)
        shift = np.zeros(3)
        shift[ax] = L
        X = self.vertices[self.faces[lo]] + shift
        img = self.find_vertices(X.reshape(-1, 3)).reshape(-1, 3)
        nv = self.n_vertices
        t = np.sort(img, axis=1)
        keys = (t[:, 0] * nv + t[:, 1]) * nv + t[:, 2]
        hi_faces = self.boundary_faces(hi_kind)
        ht = self.faces[hi_faces]
        hkeys = (ht[:, 0] * nv + ht[:, 1]) * nv + ht[:, 2]
        pos = dict(zip(hkeys.tolist(), hi_faces.tolist()))
        partner = np.array(
            [pos.get(k, -1) if (row >= 0).all() else -1 for k, row in zip(keys.tolist(), img)],
            dtype=np.int64,
        )
        return np.stack([lo, partner], axis=1)

    def periodic_edge_pairs(self, direction: int) -> np.ndarray:
        """``(k, 2)`` array of (edge on x_l = 0, translated edge on x_l = L_l)."""
        ax, L = (0, self.scene.L1) if direction == 1 else (1, self.scene.L2)
        tol = 1e-12 * L
        E = self.edges
        X = self.vertices[E]
        lo = np.flatnonzero(np.all(np.abs(X[:, :, ax]) <= tol, axis=1))
        shift = np.zeros(3)
        shift[ax] = L
        img = self.find_vertices((X[lo] + shift).reshape(-1, 3)).reshape(-1, 2)
        ok = (img >= 0).all(axis=1)
        hi = np.full(len(lo), -1, dtype=np.int64)
        hi[ok] = self.edge_ids(img[ok, 0], img[ok, 1])
        return np.stack([lo, hi], axis=1)

    # -- checks -----------------------------------------------------------

    def audit(self) -> AuditReport:
        """Check conformity, periodic pairing, volumes, materials, shape regularity."""
        s = self.scene
        msgs = []
        counts = self._face_data[3]
        conforming = bool(counts.max() <= 2)
        bnd = counts == 1
        boundary_ok = bool(np.all(self.face_kind[bnd] != INTERIOR))
        if not conforming:
            msgs.append("face shared by more than two elements")
        if not boundary_ok:
            msgs.append(f"{int(np.sum(self.face_kind[bnd] == INTERIOR))} hanging faces")
        periodic_ok = True
        for direction, (klo, khi) in ((1, (X1LO, X1HI)), (2, (X2LO, X2HI))):
            pairs = self.periodic_face_pairs(direction)
            n_hi = len(self.boundary_faces(khi))
            if (pairs[:, 1] < 0).any() or len(np.unique(pairs[:, 1])) != n_hi or len(pairs) != n_hi:
                periodic_ok = False
                msgs.append(f"periodic face pairing broken in direction {direction}")
            vp = self.periodic_vertex_pairs(direction)
            if (vp[:, 1] < 0).any():
                periodic_ok = False
                msgs.append(f"periodic vertex pairing broken in direction {direction}")
            else:
                shift = np.zeros(3)
                shift[direction - 1] = s.L1 if direction == 1 else s.L2
                gap = np.abs(self.vertices[vp[:, 1]] - self.vertices[vp[:, 0]] - shift).max(initial=0)
                if gap > 1e-12 * max(s.L1, s.L2):
                    periodic_ok = False
                    msgs.append("periodic vertices do not coincide after translation")
        box = s.L1 * s.L2 * (s.b1 - s.b2)
        volume_ok = bool(abs(self.tet_volumes.sum() - box) <= 1e-12 * box * 10)
        eng = self._engine
        dead = [t for t in range(len(eng.tv)) if eng.children[t] is not None]
        if dead:
            V = np.array(eng.coords)
            par = _tet_volumes(V[np.array([eng.tv[t] for t in dead])])
            kids = np.array([eng.children[t] for t in dead])
            kv = _tet_volumes(V[np.array([eng.tv[c] for c in kids.ravel()])]).reshape(-1, 2)
            if np.abs(kv.sum(1) - par).max() > 1e-12 * par.max():
                volume_ok = False
                msgs.append("child volumes do not sum to parent volume")
        if not volume_ok:
            msgs.append("element volumes do not fill the cell")
        materials_ok = bool(np.array_equal(s.material_index(self.centroids), self.material))
        if not materials_ok:
            msgs.append("material tag mismatch")
        mind = float(dihedral_angles(self.vertices[self.tets]).min())
        shape_ok = mind >= self.dihedral_bound * (1 - 1e-9)
        if not shape_ok:
            msgs.append(f"min dihedral {mind} below bound {self.dihedral_bound}")
        return AuditReport(
            conforming, boundary_ok, periodic_ok, volume_ok, materials_ok, shape_ok,
            mind, self.dihedral_bound, tuple(msgs),
        )


def _kuhn_cube_tets(dims):
    """The six Kuhn tetrahedra (as corner coordinates) of a box of size ``dims``."""
    out = []
    for perm in itertools.permutations(range(3)):
        c = np.zeros(3)
        path = [c.copy()]
        for ax in perm:
            c[ax] += dims[ax]
            path.append(c.copy())
        out.append(np.array(path))
    return out


def _bisection_dihedral_bound(dims):
    """Smallest dihedral angle among all Maubach descendants of a Kuhn box."""
    dims = np.asarray(dims, dtype=float)
    coords, tets = [], []
    for tet in _kuhn_cube_tets(dims):
        ids = []
        for p in tet:
            coords.append(tuple(p))
            ids.append(len(coords) - 1)
        tets.append(ids)
    eng = _Bisector(coords, tets, [0] * len(tets), 1.0, 1.0, float(dims.max()))
    # cut the lateral coupling: coordinates are local so partners would be wrong
    eng.qL1 = eng.qL2 = -1
    for _ in range(3):
        eng.refine(list(eng.alive))
    V = np.array(eng.coords)
    P = V[np.array(eng.tv)]
    return float(dihedral_angles(P).min())


def build_initial_mesh(scene: GratingScene, target_h: float) -> PeriodicMesh:
    """Structured Kuhn mesh of the cell with grid lines on all material planes."""
    if not target_h > 0:
        raise GeometryError("target_h must be positive")
    axes = []
    for planes in scene.grid_planes():
        pts = [planes[0]]
        for a, b in zip(planes[:-1], planes[1:]):
            n = max(1, math.ceil((b - a) / target_h - 1e-9))
            pts.extend(np.linspace(a, b, n + 1)[1:-1])
            pts.append(b)
        axes.append(np.array(pts, dtype=float))
    nx, ny, nz = (len(a) for a in axes)
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * ny + j) * nz + k

    tets = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            for k in range(nz - 1):
                for perm in itertools.permutations(range(3)):
                    c = [i, j, k]
                    path = [vid(*c)]
                    for ax in perm:
                        c[ax] += 1
                        path.append(vid(*c))
                    tets.append(path)
    tets = np.array(tets, dtype=np.int64)
    centroids = coords[tets].mean(axis=1)
    materials = scene.material_index(centroids)
    scale = max(scene.L1, scene.L2, abs(scene.b1), abs(scene.b2), scene.b1 - scene.b2)
    engine = _Bisector(coords, tets, materials, scene.L1, scene.L2, scale)
    shapes = {
        (round(float(dx), 14), round(float(dy), 14), round(float(dz), 14))
        for dx in np.diff(axes[0]) for dy in np.diff(axes[1]) for dz in np.diff(axes[2])
    }
    bound = min(_bisection_dihedral_bound(d) for d in shapes)
    return PeriodicMesh(scene, engine, bound)


def refine(mesh: PeriodicMesh, marked) -> PeriodicMesh:
    """Bisect every marked element at least once and close conformingly.

    Args:
        mesh: the mesh to refine (left untouched).
        marked: element indices into ``mesh``.

    Returns:
        A new conforming, periodic mesh.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size == 0:
        raise ValueError("refine needs at least one marked element")
    if marked.min() < 0 or marked.max() >= mesh.n_elements:
        raise IndexError("marked element id out of range")
    engine = mesh._engine.clone()
    engine.refine(mesh.leaf_ids[marked].tolist())
    return PeriodicMesh(mesh.scene, engine, mesh.dihedral_bound)


def refine_uniform(mesh: PeriodicMesh, generations: int = 1) -> PeriodicMesh:
    """Full bisection generations: three bisection sweeps per generation (8x elements)."""
    for _ in range(3 * generations):
        mesh = refine(mesh, np.arange(mesh.n_elements))
    return mesh


def write_vtk(path, mesh: PeriodicMesh, cell_data=None, title="dtngrating mesh"):
    """Legacy ASCII unstructured-grid file with floats at 17 significant digits."""
    cell_data = cell_data or {}
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines.extend(" ".join(f"{v:.16e}" for v in p) for p in mesh.vertices)
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {5 * ne}")
    lines.extend("4 " + " ".join(str(int(v)) for v in t) for t in mesh.tets)
    lines.append(f"CELL_TYPES {ne}")
    lines.extend(["10"] * ne)
    lines.append(f"CELL_DATA {ne}")
    data = {"material": mesh.material.astype(float), **cell_data}
    for name, values in data.items():
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.16e}" for v in values)
        else:
            lines.append(f"VECTORS {name} double")
            lines.extend(" ".join(f"{v:.16e}" for v in row) for row in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
