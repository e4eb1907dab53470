import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtngrating import scenarios
from dtngrating.errors import GeometryError
from dtngrating.mesh import (
    GAMMA1,
    GAMMA2,
    INTERIOR,
    X1HI,
    X1LO,
    BoxRegion,
    GratingScene,
    build_initial_mesh,
    refine,
    refine_uniform,
    write_vtk,
)
from dtngrating.quasi_fourier import MediumConstants

AIR = MediumConstants(1.0)


def _homogeneous(L1=0.5, L2=0.5, b1=0.3, b2=-0.3):
    return GratingScene(L1, L2, b1, b2, AIR, AIR)


def test_structured_counts():
    scene = _homogeneous()
    mesh = build_initial_mesh(scene, 10.0)
    # one cell laterally, three vertical layers split by the b2' and b1' planes
    assert mesh.n_elements == 6 * 3
    pairs = mesh.periodic_face_pairs(1)
    assert len(pairs) == 2 * 3 and (pairs[:, 1] >= 0).all()
    assert len(mesh.boundary_faces(GAMMA1)) == 2 and len(mesh.boundary_faces(GAMMA2)) == 2


def test_example1_materials_follow_the_interface(ex1_mesh):
    z = ex1_mesh.centroids[:, 2]
    top = ex1_mesh.material == 0
    assert np.all(top == (z > 0))
    assert ex1_mesh.audit().ok


def test_degenerate_scene_rejected():
    with pytest.raises(GeometryError):
        _homogeneous(b1=0.0, b2=0.0)
    with pytest.raises(GeometryError):
        build_initial_mesh(_homogeneous(), 0.0)
    with pytest.raises(GeometryError):
        GratingScene(0.5, 0.5, 0.3, -0.3, AIR, AIR, (BoxRegion((0, 0, 0.1), (0.5, 0.5, 0.3), 4.0),), b1p=0.15)


def test_inner_planes_default_to_quarter_height(ex1):
    scene, _ = ex1
    assert scene.b1p == pytest.approx(0.15) and scene.b2p == pytest.approx(-0.15)
    assert scene.d(1) == pytest.approx(0.15) and scene.d(2) == pytest.approx(0.15)


def test_uniform_generation_multiplies_by_eight():
    mesh = build_initial_mesh(_homogeneous(), 10.0)
    fine = refine_uniform(mesh, 1)
    assert fine.n_elements == 8 * mesh.n_elements
    assert fine.audit().ok


def test_marking_a_lateral_element_refines_its_partner():
    mesh = build_initial_mesh(_homogeneous(), 0.25)
    lo = mesh.boundary_faces(X1LO)
    t = int(mesh.face_tets[lo[0], 0])
    fine = refine(mesh, [t])
    assert fine.n_elements > mesh.n_elements
    rep = fine.audit()
    assert rep.ok, rep.messages
    pairs = fine.periodic_face_pairs(1)
    assert len(np.unique(pairs[:, 1])) == len(pairs) == len(fine.boundary_faces(X1HI))


def test_refine_preconditions():
    mesh = build_initial_mesh(_homogeneous(), 10.0)
    with pytest.raises(ValueError):
        refine(mesh, [])
    with pytest.raises(IndexError):
        refine(mesh, [mesh.n_elements])


def test_refine_leaves_input_untouched():
    mesh = build_initial_mesh(_homogeneous(), 10.0)
    n = mesh.n_elements
    refine(mesh, [0, 1])
    assert mesh.n_elements == n


def test_face_geometry(ex1_coarse):
    m = ex1_coarse
    assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0, atol=1e-14)
    for f in m.boundary_faces(GAMMA1):
        area, diam, nu, X = m.face_geometry(f)
        assert nu == pytest.approx([0, 0, 1])
        assert area == pytest.approx(0.5 * 0.25 * 0.25)
        assert diam == pytest.approx(0.25 * np.sqrt(2))
    for d in (1, 2):
        p = m.periodic_face_pairs(d)
        assert np.allclose(m.face_areas[p[:, 0]], m.face_areas[p[:, 1]], rtol=1e-14)
        assert np.allclose(m.face_diameters[p[:, 0]], m.face_diameters[p[:, 1]], rtol=1e-14)


def test_interior_normals_point_from_second_to_first(ex1_coarse):
    m = ex1_coarse
    f = np.flatnonzero(m.face_kind == INTERIOR)
    c = m.vertices[m.faces[f]].mean(axis=1)
    t1, t2 = m.face_tets[f, 0], m.face_tets[f, 1]
    nu = m.face_normals[f]
    assert np.all(np.einsum("ij,ij->i", m.centroids[t1] - c, nu) > 0)
    assert np.all(np.einsum("ij,ij->i", m.centroids[t2] - c, nu) < 0)


@settings(max_examples=8)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_random_refinement_keeps_invariants(seed, steps):
    rng = np.random.default_rng(seed)
    scene, _ = scenarios.example1()
    mesh = build_initial_mesh(scene, 0.25)
    for _ in range(steps):
        k = int(rng.integers(1, 4))
        mesh = refine(mesh, rng.choice(mesh.n_elements, size=k, replace=False))
    rep = mesh.audit()
    assert rep.ok, rep.messages
    assert mesh.tet_volumes.sum() == pytest.approx(0.5 * 0.5 * 0.6, rel=1e-12)
    assert rep.min_dihedral >= rep.dihedral_bound - 1e-12


def test_vtk_export(tmp_path, ex1_coarse):
    path = tmp_path / "m.vtk"
    write_vtk(path, ex1_coarse, {"eta": np.arange(ex1_coarse.n_elements, dtype=float)})
    text = path.read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0"
    assert f"CELLS {ex1_coarse.n_elements} {5 * ex1_coarse.n_elements}" in text
    first = text[5].split()
    assert all(len(v.split("e")[0].replace("-", "").replace(".", "")) == 17 for v in first)
    assert "SCALARS eta double 1" in text
