"""Adaptive DtN finite element loop.

Truncation orders are chosen once from the exponential decay criterion; then
the loop solves, estimates, marks by bulk chasing on squared indicators, and
refines until ``eta + t1 + t2`` drops below the tolerance or a budget is hit.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from typing import Callable, Optional

import numpy as np

from dtngrating import dtn, fem
from dtngrating import solver as linsolve
from dtngrating.errors import AllZeroError, ConfigError
from dtngrating.estimator import ErrorReport, estimate, min_truncation_order, sigma
from dtngrating.mesh import PeriodicMesh, build_initial_mesh, refine, refine_uniform
from dtngrating.quasi_fourier import build_mode_set
from dtngrating.scenarios import hcurl_error

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "dofs", "elements", "eta", "t1", "t2", "true_error", "N1", "N2", "seconds")


@dataclasses.dataclass(frozen=True)
class AdaptConfig:
    """Parameters of one adaptive (or uniform) run.

    Attributes:
        tol: stop once ``eta + t1 + t2 <= tol``.
        tau: bulk-chasing fraction in (0, 1).
        delta_trunc: target for ``exp(-d_j sigma_j)``.
        max_iter: maximum number of solves.
        max_dofs: stop before solving on a mesh with more DOFs.
        uniform: replace marking by a full bisection generation (8x elements).
        solver: ``"direct"`` or ``"iterative"``.
        initial_h: target size of the initial structured mesh.
        truncation: fixed ``(N1, N2)`` overriding the decay criterion.
    """

    tol: float = 1e-2
    tau: float = 0.7
    delta_trunc: float = 1e-8
    max_iter: int = 30
    max_dofs: int = 200_000
    uniform: bool = False
    solver: str = "direct"
    solver_tol: float = linsolve.DEFAULT_TOL
    initial_h: Optional[float] = None
    truncation: Optional[tuple] = None

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.solver not in ("direct", "iterative"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")


@dataclasses.dataclass
class IterationLog:
    records: list = dataclasses.field(default_factory=list)

    def append(self, **rec):
        self.records.append({k: rec.get(k) for k in LOG_COLUMNS})

    def column(self, name) -> np.ndarray:
        return np.array([r[name] if r[name] is not None else np.nan for r in self.records], dtype=float)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow(["" if r[k] is None else r[k] for k in LOG_COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "IterationLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec = {}
                for k in LOG_COLUMNS:
                    v = row[k]
                    if v == "":
                        rec[k] = None
                    elif k in ("iter", "dofs", "elements", "N1", "N2"):
                        rec[k] = int(v)
                    else:
                        rec[k] = float(v)
                out.append(**rec)
        return out


@dataclasses.dataclass
class AdaptResult:
    field: fem.DiscreteField
    log: IterationLog
    stop_reason: str
    modeset: object
    report: ErrorReport
    mesh: PeriodicMesh
    dtn_block: dtn.DtnBlock


def choose_truncation(scene, wave, delta_trunc: float = 1e-8):
    """Smallest ``N_j >= M_j`` with ``exp(-d_j sigma_j(N_j)) < delta_trunc``."""
    out = []
    for j in (1, 2):
        k2 = scene.medium(j).kappa_sq(wave.omega)
        N = min_truncation_order(k2, scene.L1, scene.L2)
        while math.exp(-scene.d(j) * sigma(N, k2, scene.L1, scene.L2)) >= delta_trunc:
            N += 1
        out.append(N)
    return tuple(out)


def mark(indicators, tau: float) -> np.ndarray:
    """Minimal Doerfler set: ``sum_S eta_T^2 > tau^2 sum eta_T^2``.

    Elements are taken by decreasing indicator, ties by increasing id.

    Raises:
        AllZeroError: if every indicator vanishes.
    """
    eta = np.asarray(indicators, dtype=float)
    sq = eta**2
    total = sq.sum()
    if not total > 0:
        raise AllZeroError("all indicators vanish")
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(sq[order])
    k = int(np.searchsorted(csum, tau**2 * total, side="right")) + 1
    k = min(k, int((eta > 0).sum()))
    return np.sort(order[:k])


def default_initial_h(scene) -> float:
    return min(scene.L1, scene.L2, scene.b1 - scene.b2) / 4


def solve_on_mesh(mesh, wave, modeset, cfg: AdaptConfig):
    """Assemble and solve on one mesh; returns ``(field, dtn_block, solve_report)``."""
    dm = fem.build_dofmap(mesh, wave.alpha)
    A = fem.assemble_volume(mesh, dm, wave.omega)
    B = dtn.assemble_dtn_block(mesh, dm, modeset)
    f = fem.assemble_rhs(dm, wave, modeset, trace=B.part(1))
    rep = linsolve.solve(A, B, f, method=cfg.solver, solver_tol=cfg.solver_tol)
    return fem.DiscreteField(dm, rep.solution), B, rep


def count_dofs(mesh) -> int:
    """Number of DOFs after quasi-periodic identification (no phases needed)."""
    s = mesh.scene
    X = mesh.vertices[mesh.edges]
    s1 = np.all(np.abs(X[:, :, 0] - s.L1) <= 1e-12 * s.L1, axis=1)
    s2 = np.all(np.abs(X[:, :, 1] - s.L2) <= 1e-12 * s.L2, axis=1)
    return int(len(X) - np.count_nonzero(s1 | s2))


def run(
    scene, wave, cfg: AdaptConfig, exact=None, mesh: PeriodicMesh | None = None,
    callback: Callable | None = None,
) -> AdaptResult:
    """Run the adaptive (or uniform) loop.

    Args:
        exact: optional object with ``field``/``curl`` methods; enables the
            ``true_error`` column.
        mesh: initial mesh (default: structured mesh with ``cfg.initial_h``).
        callback: called as ``callback(k, field, report)`` after every estimate.
    """
    if mesh is None:
        mesh = build_initial_mesh(scene, cfg.initial_h or default_initial_h(scene))
    N1, N2 = cfg.truncation or choose_truncation(scene, wave, cfg.delta_trunc)
    modeset = build_mode_set(wave, scene.media, scene.L1, scene.L2, N1, N2)
    log.info("truncation N1=%d N2=%d (%d/%d modes)", N1, N2, len(modeset.modes1), len(modeset.modes2))
    history = IterationLog()
    k = 0
    while True:
        t0 = time.perf_counter()
        try:
            field, B, _ = solve_on_mesh(mesh, wave, modeset, cfg)
        except Exception as exc:
            exc.args = (f"iteration {k}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        report = estimate(field, wave, modeset, B)
        err = hcurl_error(field, exact) if exact is not None else None
        report.true_error = err
        history.append(
            iter=k, dofs=field.dofmap.ndof, elements=mesh.n_elements, eta=report.eta,
            t1=report.t1, t2=report.t2, true_error=err, N1=N1, N2=N2,
            seconds=time.perf_counter() - t0,
        )
        log.info(
            "iter %d: dofs=%d eta=%.4e err=%s", k, field.dofmap.ndof, report.eta,
            "-" if err is None else f"{err:.4e}",
        )
        if callback is not None:
            callback(k, field, report)
        if report.total <= cfg.tol:
            reason = "tolerance"
            break
        if k + 1 >= cfg.max_iter:
            reason = "max_iterations"
            break
        if cfg.uniform:
            new_mesh = refine_uniform(mesh, 1)
        else:
            try:
                new_mesh = refine(mesh, mark(report.eta_T, cfg.tau))
            except AllZeroError:
                reason = "resolved"
                break
        if count_dofs(new_mesh) > cfg.max_dofs:
            reason = "max_dofs"
            break
        mesh = new_mesh
        k += 1
    return AdaptResult(field, history, reason, modeset, report, mesh, B)


def dofs_at_level(dofs, errors, level) -> float:
    """DOFs at which a run first reaches ``errors <= level``.

    Interpolates linearly in log-log coordinates between the last iterate
    above the level and the first one at or below it. Returns ``nan`` when
    the run never reaches the level and ``dofs[0]`` when it starts below it.
    """
    dofs = np.asarray(dofs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    hit = np.flatnonzero(errors <= level)
    if not len(hit):
        return float("nan")
    k = int(hit[0])
    if k == 0:
        return float(dofs[0])
    x0, x1 = np.log(dofs[k - 1]), np.log(dofs[k])
    y0, y1 = np.log(errors[k - 1]), np.log(errors[k])
    s = (np.log(level) - y0) / (y1 - y0)
    return float(np.exp(x0 + s * (x1 - x0)))


def matched_levels(adaptive: IterationLog, uniform: IterationLog, column: str = "true_error"):
    """Compare DOF counts of two runs at the error levels both of them reach.

    Every uniform iterate that lies on a refined mesh (not the shared initial
    one) and whose error the adaptive run also reaches is one matched level.

    Returns:
        List of ``(level, uniform_dofs, adaptive_dofs)``.
    """
    ad, ae = adaptive.column("dofs"), adaptive.column(column)
    ud, ue = uniform.column("dofs"), uniform.column(column)
    out = []
    for d, e in zip(ud, ue):
        if d <= ad[0] or not np.isfinite(e):
            continue
        a = dofs_at_level(ad, ae, e)
        if np.isfinite(a):
            out.append((float(e), float(d), a))
    return out
