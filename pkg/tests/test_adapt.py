import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtngrating import adapt, scenarios
from dtngrating.errors import AllZeroError, ConfigError
from dtngrating.estimator import sigma
from dtngrating.quasi_fourier import MediumConstants


def _brute_force_mark(eta, tau):
    """Smallest subset beating the bulk threshold, ties by larger eta then smaller id."""
    eta = np.asarray(eta, dtype=float)
    target = tau**2 * (eta**2).sum()
    for k in range(1, len(eta) + 1):
        best = None
        for S in itertools.combinations(range(len(eta)), k):
            if (eta[list(S)] ** 2).sum() > target:
                key = (sorted(-eta[list(S)]), S)
                if best is None or key < best[0]:
                    best = (key, S)
        if best is not None:
            return np.array(best[1])
    return np.flatnonzero(eta > 0)


def test_mark_hand_example():
    assert adapt.mark([3.0, 2.0, 1.0], 0.5).tolist() == [0]


def test_mark_tau_close_to_one_takes_all_positive():
    eta = np.array([0.5, 0.0, 2.0, 1e-3, 0.7])
    assert adapt.mark(eta, 1 - 1e-12).tolist() == [0, 2, 3, 4]


def test_mark_single_element():
    for tau in (0.01, 0.5, 0.99):
        assert adapt.mark([0.3], tau).tolist() == [0]


def test_mark_all_zero_raises():
    with pytest.raises(AllZeroError):
        adapt.mark(np.zeros(4), 0.5)


def test_mark_ties_prefer_smaller_id():
    assert adapt.mark([1.0, 1.0, 1.0, 1.0], 0.5).tolist() == [0, 1]


@given(
    st.lists(st.floats(0, 10, allow_subnormal=False), min_size=1, max_size=7).filter(lambda v: sum(v) > 0),
    st.floats(0.05, 0.95),
)
def test_mark_matches_enumeration(eta, tau):
    eta = np.round(np.asarray(eta), 3)
    if not (eta**2).sum() > 0:
        return
    S = adapt.mark(eta, tau)
    assert (eta[S] ** 2).sum() > tau**2 * (eta**2).sum()
    assert len(S) == len(_brute_force_mark(eta, tau))
    assert np.array_equal(S, np.sort(_brute_force_mark(eta, tau)))


def _d_quarter_scene():
    top, bottom = MediumConstants(1.0), MediumConstants(2.25)
    return scenarios.flat_scene(0.5, 0.5, 0.5, -0.5, top, bottom, b1p=0.25, b2p=-0.25)


def test_choose_truncation_example_d_quarter(ex1):
    _, wave = ex1
    scene = _d_quarter_scene()
    assert scene.d1 == scene.d2 == 0.25
    N1, N2 = adapt.choose_truncation(scene, wave, 1e-8)
    assert N1 == 6
    k2 = (2 * math.pi) ** 2
    assert math.exp(-0.25 * sigma(6, k2, 0.5, 0.5)) < 1e-8 < math.exp(-0.25 * sigma(5, k2, 0.5, 0.5))
    k2b = 2.25 * k2
    assert math.exp(-0.25 * sigma(N2, k2b, 0.5, 0.5)) < 1e-8 <= math.exp(-0.25 * sigma(N2 - 1, k2b, 0.5, 0.5))


def test_choose_truncation_example1_defaults(ex1):
    scene, wave = ex1
    assert adapt.choose_truncation(scene, wave) == (10, 10)


def test_choose_truncation_delta_one_gives_cutoff(ex1):
    scene, wave = ex1
    assert adapt.choose_truncation(scene, wave, 1.0) == (1, 1)


@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45))
def test_choose_truncation_monotone_in_d(f_small, f_large):
    f_small, f_large = sorted((f_small, f_large))
    _, wave = scenarios.example1()
    top, bottom = MediumConstants(1.0), MediumConstants(2.25)
    small = scenarios.flat_scene(0.5, 0.5, 0.5, -0.5, top, bottom, d_fraction=f_small)
    large = scenarios.flat_scene(0.5, 0.5, 0.5, -0.5, top, bottom, d_fraction=f_large)
    Ns, Nl = adapt.choose_truncation(small, wave), adapt.choose_truncation(large, wave)
    assert Nl[0] <= Ns[0] and Nl[1] <= Ns[1]


@pytest.mark.parametrize(
    "kw", [dict(tau=0.0), dict(tau=1.0), dict(tol=0.0), dict(solver="mumps"), dict(max_iter=0)]
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        adapt.AdaptConfig(**kw)


SMALL = adapt.AdaptConfig(initial_h=0.25, truncation=(3, 3), max_iter=3)


def test_infinite_tolerance_solves_once(ex1):
    scene, wave = ex1
    res = adapt.run(scene, wave, adapt.AdaptConfig(tol=math.inf, initial_h=0.25, truncation=(3, 3)))
    assert len(res.log) == 1
    assert res.stop_reason == "tolerance"
    assert res.mesh.n_elements == res.field.mesh.n_elements


def test_adaptive_run_is_deterministic(ex1):
    scene, wave = ex1
    runs = [adapt.run(scene, wave, SMALL) for _ in range(2)]
    for a, b in zip(runs[0].log.records, runs[1].log.records):
        for k in adapt.LOG_COLUMNS:
            if k != "seconds":
                assert a[k] == b[k]
    assert np.array_equal(runs[0].mesh.tets, runs[1].mesh.tets)
    assert np.array_equal(runs[0].field.coeffs, runs[1].field.coeffs)


def test_adaptive_log_contents(ex1):
    scene, wave = ex1
    exact = scenarios.ExactFlatSolution(wave, scene.top, scene.bottom)
    seen = []
    res = adapt.run(scene, wave, SMALL, exact=exact, callback=lambda k, f, r: seen.append(k))
    assert seen == [0, 1, 2]
    assert res.stop_reason == "max_iterations"
    dofs = res.log.column("dofs")
    assert (np.diff(dofs) > 0).all()
    assert np.isfinite(res.log.column("true_error")).all()
    assert res.log.records[-1]["dofs"] == res.field.dofmap.ndof
    assert all(r["N1"] == 3 and r["N2"] == 3 for r in res.log.records)
    assert res.report.total == res.report.eta + res.report.t1 + res.report.t2


def test_uniform_mode_multiplies_elements_by_eight(ex1):
    scene, wave = ex1
    res = adapt.run(scene, wave, adapt.AdaptConfig(initial_h=0.25, truncation=(3, 3), max_iter=3, uniform=True))
    el = res.log.column("elements")
    assert np.array_equal(el[1:] / el[:-1], [8.0, 8.0])
    assert (np.diff(res.log.column("dofs")) > 0).all()


def test_dof_budget_stops_before_solving(ex1):
    scene, wave = ex1
    cfg = adapt.AdaptConfig(initial_h=0.25, truncation=(3, 3), max_dofs=1000, uniform=True)
    res = adapt.run(scene, wave, cfg)
    assert res.stop_reason == "max_dofs"
    assert res.log.column("dofs").max() <= 1000


def test_count_dofs_matches_dofmap(ex1, ex1_mesh):
    from dtngrating import fem

    _, wave = ex1
    assert adapt.count_dofs(ex1_mesh) == fem.build_dofmap(ex1_mesh, wave.alpha).ndof


def test_log_csv_round_trip(tmp_path, ex1):
    scene, wave = ex1
    res = adapt.run(scene, wave, adapt.AdaptConfig(initial_h=0.25, truncation=(3, 3), max_iter=2))
    path = tmp_path / "log.csv"
    res.log.write_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(adapt.LOG_COLUMNS)
    back = adapt.IterationLog.read_csv(path)
    assert back.records == res.log.records


def test_dofs_at_level_interpolates_log_log():
    dofs = [100, 1000, 10000]
    err = [1.0, 0.1, 0.01]
    assert adapt.dofs_at_level(dofs, err, 0.1) == pytest.approx(1000, rel=1e-12)
    assert adapt.dofs_at_level(dofs, err, 10 ** -1.5) == pytest.approx(10**3.5, rel=1e-12)
    assert adapt.dofs_at_level(dofs, err, 2.0) == 100
    assert math.isnan(adapt.dofs_at_level(dofs, err, 1e-3))


def test_matched_levels_skip_shared_initial_mesh():
    ad, un = adapt.IterationLog(), adapt.IterationLog()
    for d, e in ((100, 1.0), (300, 0.4), (900, 0.1)):
        ad.append(dofs=d, true_error=e)
    for d, e in ((100, 1.0), (800, 0.5), (6400, 0.05)):
        un.append(dofs=d, true_error=e)
    levels = adapt.matched_levels(ad, un)
    assert len(levels) == 1
    level, u, a = levels[0]
    assert (level, u) == (0.5, 800)
    assert 100 < a < 300
