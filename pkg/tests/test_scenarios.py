import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtngrating import adapt, dtn, fem, scenarios
from dtngrating.errors import ConfigError, PlaneNotConformingError
from dtngrating.mesh import build_initial_mesh
from dtngrating.quasi_fourier import IncidentWave, MediumConstants, build_mode_set, lattice_alphas

from conftest import te_wave

SQ3, SQ8 = math.sqrt(3), 2 * math.sqrt(2)
R_EX1 = (SQ3 - SQ8) / (SQ3 + SQ8)


@pytest.fixture(scope="module")
def ex1_sol(ex1):
    scene, wave = ex1
    return scenarios.ExactFlatSolution(wave, scene.top, scene.bottom)


@pytest.fixture(scope="module")
def ex1_solved(ex1):
    """Example 1 solved on the structured h = 0.0625 mesh."""
    scene, wave = ex1
    ms = build_mode_set(wave, scene.media, scene.L1, scene.L2, *adapt.choose_truncation(scene, wave))
    mesh = build_initial_mesh(scene, 0.0625)
    field, _, _ = adapt.solve_on_mesh(mesh, wave, ms, adapt.AdaptConfig())
    return field, ms


def test_example1_reflection_and_transmission(ex1_sol):
    assert ex1_sol.beta1 == pytest.approx(math.pi * SQ3, rel=1e-14)
    assert ex1_sol.beta2 == pytest.approx(SQ8 * math.pi, rel=1e-14)
    assert ex1_sol.r == pytest.approx(R_EX1, rel=1e-13)
    assert ex1_sol.t == pytest.approx(2 * SQ3 / (SQ3 + SQ8), rel=1e-13)
    assert ex1_sol.r.real == pytest.approx(-0.2404, abs=5e-5)
    assert ex1_sol.t.real == pytest.approx(0.7596, abs=5e-5)


def test_matched_media_reduce_to_incident_wave(rng):
    med = MediumConstants(2.25)
    wave = te_wave(0.3, 1.1, med)
    sol = scenarios.ExactFlatSolution(wave, med, med)
    assert sol.r == 0 and sol.t == 1
    x = rng.uniform(-1, 1, size=(50, 3))
    inc = np.exp(1j * (x[:, :2] @ wave.alpha - wave.beta * x[:, 2]))[:, None] * wave.p
    assert np.allclose(sol.field(x), inc, rtol=0, atol=1e-14)


def test_energy_identity_exact(ex1_sol):
    b1, b2 = ex1_sol.beta1.real, ex1_sol.beta2.real
    assert abs(ex1_sol.r) ** 2 + abs(ex1_sol.t) ** 2 * b2 / b1 == pytest.approx(1.0, abs=1e-12)
    eff = scenarios.exact_efficiencies(ex1_sol)
    assert eff.total == pytest.approx(1.0, abs=1e-12)
    assert eff.reflected[(0, 0)] == pytest.approx(0.0578, abs=5e-5)
    assert eff.transmitted[(0, 0)] == pytest.approx(0.9422, abs=5e-5)


@given(st.floats(0.05, 1.4), st.floats(0, 2 * math.pi), st.floats(1.0, 4.0), st.floats(0.5, 4.0))
def test_energy_identity_random_lossless(theta1, theta2, eps1, eps2):
    top, bottom = MediumConstants(eps1), MediumConstants(eps2)
    sol = scenarios.ExactFlatSolution(te_wave(theta1, theta2, top), top, bottom)
    b2 = sol.beta2
    flux_t = abs(sol.t) ** 2 * b2.real / sol.beta1.real
    assert abs(sol.r) ** 2 + flux_t == pytest.approx(1.0, abs=1e-12)


def test_tangential_continuity_at_interface(ex1_sol, rng):
    x = np.column_stack([rng.uniform(0, 0.5, 100), rng.uniform(0, 0.5, 100), np.zeros(100)])
    above = ex1_sol.field(x)
    below = ex1_sol.t * np.exp(1j * x[:, :2] @ ex1_sol.wave.alpha)[:, None] * ex1_sol.wave.p
    assert np.abs(above[:, :2] - below[:, :2]).max() < 1e-13
    assert abs((1 + ex1_sol.r) - ex1_sol.t) < 1e-15


def test_exact_solution_satisfies_maxwell(ex1_sol, rng):
    # every piece is a plane wave p e^{i q.x}; curl curl E = -q x (q x p) e^{i q.x}
    wave = ex1_sol.wave
    omega = wave.omega
    a = np.asarray(wave.alpha)
    x = rng.uniform(-0.3, 0.3, size=(200, 3))
    above = x[:, 2] >= 0
    lat = np.exp(1j * x[:, :2] @ a)
    cc = np.zeros((len(x), 3), complex)
    for q3, amp, mask, med in (
        (-ex1_sol.beta1, np.exp(-1j * ex1_sol.beta1 * x[:, 2]), above, ex1_sol.top),
        (ex1_sol.beta1, ex1_sol.r * np.exp(1j * ex1_sol.beta1 * x[:, 2]), above, ex1_sol.top),
        (-ex1_sol.beta2, ex1_sol.t * np.exp(-1j * ex1_sol.beta2 * x[:, 2]), ~above, ex1_sol.bottom),
    ):
        q = np.array([a[0], a[1], q3])
        assert abs(q @ q - med.kappa_sq(omega)) < 1e-12 * abs(med.kappa_sq(omega))
        assert abs(q @ wave.p) < 1e-12
        cc += (mask * lat * amp)[:, None] * (-np.cross(q, np.cross(q, wave.p)))
    k2 = np.where(above, ex1_sol.top.kappa_sq(omega), ex1_sol.bottom.kappa_sq(omega))
    res = cc - k2[:, None] * ex1_sol.field(x)
    assert np.abs(res).max() < 1e-12 * np.abs(k2[:, None] * ex1_sol.field(x)).max()


def test_exact_curl_matches_finite_differences(ex1_sol, rng):
    x = rng.uniform(0.05, 0.25, size=(20, 3)) * np.array([1, 1, 1])
    h = 1e-6
    J = np.zeros((len(x), 3, 3), complex)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, :, k] = (ex1_sol.field(x + e) - ex1_sol.field(x - e)) / (2 * h)
    curl = np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=1)
    assert np.abs(curl - ex1_sol.curl(x)).max() < 1e-6 * np.abs(curl).max()


def test_closed_form_requires_horizontal_polarization(ex1):
    scene, wave = ex1
    tilted = IncidentWave(1.0, 0.0, 0.0, (1.0, 0.0, 0.0), scene.top)
    scenarios.ExactFlatSolution(tilted, scene.top, scene.bottom)
    pt = np.array([1.0, 0.0])
    bad = dataclasses.replace(wave, polarization=(1.0, 0.0, (np.asarray(wave.alpha) @ pt) / wave.beta))
    with pytest.raises(ConfigError):
        scenarios.ExactFlatSolution(bad, scene.top, scene.bottom)


def test_hcurl_error_of_zero_field_is_solution_norm(ex1, ex1_coarse, ex1_sol):
    dm = fem.build_dofmap(ex1_coarse, ex1[1].alpha)
    zero = fem.DiscreteField(dm, np.zeros(dm.ndof))
    e = scenarios.hcurl_error(zero, ex1_sol)
    assert e > 0
    assert e == pytest.approx(scenarios.hcurl_error(zero, ex1_sol, degree=8), rel=1e-8)


def test_hcurl_interpolation_error_is_first_order(ex1, ex1_sol):
    scene, wave = ex1
    sizes, errs = [], []
    for h in (0.125, 0.0625, 0.03125):
        mesh = build_initial_mesh(scene, h)
        field = fem.interpolate(fem.build_dofmap(mesh, wave.alpha), ex1_sol.field)
        sizes.append(mesh.tet_diameters.max())
        errs.append(scenarios.hcurl_error(field, ex1_sol))
    assert errs[0] > errs[1] > errs[2]
    rate = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert 0.75 <= rate <= 1.25


def test_hcurl_error_invariant_under_dof_permutation(ex1, ex1_coarse, ex1_sol, rng):
    dm = fem.build_dofmap(ex1_coarse, ex1[1].alpha)
    u = rng.normal(size=dm.ndof) + 1j * rng.normal(size=dm.ndof)
    p = rng.permutation(dm.ndof)
    master = np.empty_like(dm.master_edges)
    master[p] = dm.master_edges
    dm2 = dataclasses.replace(
        dm, edge_dof=p[dm.edge_dof], master_edges=master, elem_dof=p[dm.elem_dof]
    )
    u2 = np.empty_like(u)
    u2[p] = u
    e1 = scenarios.hcurl_error(fem.DiscreteField(dm, u), ex1_sol)
    e2 = scenarios.hcurl_error(fem.DiscreteField(dm2, u2), ex1_sol)
    assert e1 == pytest.approx(e2, rel=1e-14)


def test_rayleigh_zero_field(ex1, ex1_coarse):
    dm = fem.build_dofmap(ex1_coarse, ex1[1].alpha)
    spec = scenarios.rayleigh_extract(fem.DiscreteField(dm, np.zeros(dm.ndof)), 0.3, [[0, 0], [1, -1]])
    assert not spec.coeffs.any()


def test_rayleigh_extract_inverts_synthesis():
    # tangential coefficients converge at second order; the normal component
    # of a lowest-order edge field is only first-order accurate
    med = MediumConstants(1.0)
    scene = scenarios.flat_scene(0.5, 0.5, 0.3, -0.3, med, med)
    wave = te_wave(math.pi / 6, math.pi / 6)
    idx = np.array([[0, 0], [1, 0], [0, -1], [1, 1]])
    al = lattice_alphas(wave.alpha, 0.5, 0.5, idx)
    c = np.array([[1.0, 0.5j, 0.2], [0.3, -0.2, 0.0], [0.0, 0.4, -0.1j], [0.1j, 0.1, 0.3]])
    err = []
    for h in (0.1, 0.05):
        mesh = build_initial_mesh(scene, h)
        dm = fem.build_dofmap(mesh, wave.alpha)
        field = fem.interpolate(dm, lambda x: dtn.synthesize(al, c, x[:, :2]))
        spec = scenarios.rayleigh_extract(field, 0.3, idx, al)
        assert spec.x3 == pytest.approx(0.3, abs=1e-12)
        assert np.array_equal(spec.coefficient((1, 0)), spec.coeffs[1])
        err.append(np.abs(spec.coeffs - c).max(axis=0))
    assert err[0][:2].max() < 0.06
    assert err[0][:2].max() / err[1][:2].max() > 3.0
    assert err[0][2] / err[1][2] > 1.7


def test_rayleigh_single_mode_has_no_leakage_on_structured_mesh():
    med = MediumConstants(1.0)
    scene = scenarios.flat_scene(0.5, 0.5, 0.3, -0.3, med, med)
    wave = te_wave(math.pi / 6, math.pi / 6)
    idx = np.array([[0, 0], [1, 0], [0, -1], [1, 1], [-2, 1]])
    al = lattice_alphas(wave.alpha, 0.5, 0.5, idx)
    p = np.array([-al[1, 1], al[1, 0], 0.3])
    mesh = build_initial_mesh(scene, 0.05)
    field = fem.interpolate(fem.build_dofmap(mesh, wave.alpha), lambda x: np.exp(1j * x[:, :2] @ al[1])[:, None] * p)
    spec = scenarios.rayleigh_extract(field, 0.0, idx, al)
    assert np.abs(np.delete(spec.coeffs, 1, axis=0)).max() < 1e-12 * np.abs(p).max()
    assert np.abs(spec.coeffs[1, :2] - p[:2]).max() < 0.05 * np.abs(p).max()


def test_plane_snapping(ex1, ex1_coarse, ex1_mesh):
    planes = scenarios.conforming_planes(ex1_mesh)
    assert 0.0 in planes and 0.3 in planes and -0.3 in planes
    z, faces = scenarios.snap_plane(ex1_mesh, 0.01)
    assert z == 0.0
    assert ex1_mesh.face_areas[faces].sum() == pytest.approx(0.25, rel=1e-12)
    with pytest.raises(PlaneNotConformingError):
        scenarios.snap_plane(ex1_coarse, 0.04, tol=1e-3)


def test_decay_check_on_exact_solution_passes(ex1, ex1_sol):
    scene, wave = ex1
    ms = build_mode_set(wave, scene.media, scene.L1, scene.L2, 3, 3)
    mesh = build_initial_mesh(scene, 0.125)
    field = fem.interpolate(fem.build_dofmap(mesh, wave.alpha), ex1_sol.field)
    rep = scenarios.decay_check(field, ms)
    assert rep.ok
    assert rep.worst_ratio == 0.0
    assert len(rep.rows) > 0


def test_decay_check_synthetic_evanescent_mode():
    # one evanescent order decaying away from x3 = 0 on both sides: its
    # tangential coefficients fall exactly at the bound's rate
    med = MediumConstants(1.0)
    scene = scenarios.flat_scene(0.5, 0.5, 0.3, -0.3, med, med)
    wave = IncidentWave(1.0, 0.0, 0.0, (1.0, 0.0, 0.0), med)
    ms = build_mode_set(wave, scene.media, 0.5, 0.5, 2, 2)
    m = next(i for i, mode in enumerate(ms.modes(1)) if mode.n == (1, 0))
    al, beta = ms.alphas(1)[m], ms.betas(1)[m]
    assert beta.real == 0 and beta.imag > 0
    p = np.array([0.0, 1.0, 0.0])

    def E(x):
        return np.exp(1j * (x[:, :2] @ al) - beta.imag * np.abs(x[:, 2]))[:, None] * p

    mesh = build_initial_mesh(scene, 0.05)
    rep = scenarios.decay_check(fem.interpolate(fem.build_dofmap(mesh, wave.alpha), E), ms)
    expect = math.exp(-scene.d1 * beta.imag)
    for j in (1, 2):
        row = next(r for r in rep.rows if r[0] == j and r[1] == (1, 0) and r[2] == 1)
        _, _, _, outer, inner, bound = row
        assert outer / inner == pytest.approx(expect, rel=1e-10)
        assert outer / bound == pytest.approx(1.0, rel=1e-10)
    tangential = [r for r in rep.rows if r[2] < 2]
    assert all(r[3] <= 1.5 * r[5] + 1e-10 for r in tangential)


def test_example1_solved_reflection(ex1, ex1_solved):
    scene, wave = ex1
    field, ms = ex1_solved
    up, down = scenarios.boundary_spectra(field, ms)
    r_h = scenarios.zeroth_reflection(up, wave)
    assert abs(r_h - R_EX1) / abs(R_EX1) < 0.1


def test_example1_solved_efficiencies(ex1, ex1_solved):
    scene, wave = ex1
    field, ms = ex1_solved
    up, down = scenarios.boundary_spectra(field, ms)
    eff = scenarios.diffraction_efficiencies(up, down, wave, scene.media)
    assert set(eff.reflected) == {(0, 0)}
    assert eff.total == pytest.approx(1.0, abs=1e-10)
    assert eff.reflected[(0, 0)] == pytest.approx(abs(R_EX1) ** 2, rel=0.2)


def test_absorbing_substrate_loses_energy(ex1):
    _, wave = ex1
    top, bottom = MediumConstants(1.0), MediumConstants(2.25 + 0.5j)
    scene = scenarios.flat_scene(0.5, 0.5, 0.3, -0.3, top, bottom)
    ms = build_mode_set(wave, scene.media, 0.5, 0.5, 4, 4)
    field, _, _ = adapt.solve_on_mesh(build_initial_mesh(scene, 0.0625), wave, ms, adapt.AdaptConfig())
    up, down = scenarios.boundary_spectra(field, ms)
    eff = scenarios.diffraction_efficiencies(up, down, wave, scene.media)
    assert 0 < eff.total < 1
    # exact flux: R_0 above, and T_0 attenuated from the interface down to b2
    sol = scenarios.ExactFlatSolution(wave, top, bottom)
    ex = scenarios.exact_efficiencies(sol)
    assert ex.total == pytest.approx(1.0, abs=1e-12)
    t_b2 = ex.transmitted[(0, 0)] * math.exp(-2 * sol.beta2.imag * abs(scene.b2))
    assert eff.total == pytest.approx(ex.reflected[(0, 0)] + t_b2, abs=0.02)
    assert ex.reflected[(0, 0)] + t_b2 < 1


def test_slope_fit():
    d = np.array([1e3, 1e4, 1e5])
    assert scenarios.slope_fit(d, d ** (-1 / 3)) == pytest.approx(-1 / 3, rel=1e-12)
    assert scenarios.slope_fit(d, [1.0, 5.0, 2 * 1e5 ** -0.5], last=2) < 0
    assert math.isnan(scenarios.slope_fit([1.0], [1.0]))


def test_example2_scene_layout():
    scene, wave = scenarios.example2()
    P = 1.25 * math.sqrt(2)
    assert scene.L1 == scene.L2 == pytest.approx(P)
    mats = scene.material_index(np.array([[0.2, 0.2, 0.0], [P - 0.2, 0.2, 0.0], [0.2, 0.2, 1.0], [0.2, 0.2, -1.0]]))
    eps = [scene.materials[k].eps for k in mats]
    assert eps == [2.25, 1.0, 1.0, 2.25]
    assert wave.alpha == pytest.approx((0.0, 0.0))
