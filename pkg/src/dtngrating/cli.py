"""Command line interface: ``dtngrating {solve,study,modes,audit-mesh}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from dtngrating import adapt
from dtngrating.config import RunConfig, load_config
from dtngrating.errors import ConfigError, GratingError
from dtngrating.mesh import build_initial_mesh, refine, write_vtk
from dtngrating.quasi_fourier import build_mode_set
from dtngrating.scenarios import (
    ExactFlatSolution,
    boundary_spectra,
    diffraction_efficiencies,
    zeroth_reflection,
    slope_fit,
)

log = logging.getLogger("dtngrating")

SLOPE_WINDOW = 5


def _exact_for(cfg: RunConfig):
    """Closed-form solution when the scene is a flat interface under horizontal polarization."""
    if cfg.layout != "flat":
        return None
    interface = cfg.scene.regions[0].lo[2]
    try:
        return ExactFlatSolution(cfg.wave, cfg.scene.top, cfg.scene.bottom, interface)
    except ConfigError:
        return None


def _override(cfg: RunConfig, args, uniform=None) -> RunConfig:
    kw = {}
    for flag, key in (("tol", "tol"), ("tau", "tau"), ("max_dofs", "max_dofs"), ("solver", "solver")):
        v = getattr(args, flag, None)
        if v is not None:
            kw[key] = v
    if uniform is not None:
        kw["uniform"] = uniform
    elif getattr(args, "uniform", False):
        kw["uniform"] = True
    out = cfg.output
    if getattr(args, "output_dir", None):
        out = dataclasses.replace(out, directory=args.output_dir)
    return dataclasses.replace(cfg, adapt=dataclasses.replace(cfg.adapt, **kw), output=out)


def _cplx(z):
    return [float(np.real(z)), float(np.imag(z))]


def _slopes(history: adapt.IterationLog) -> dict:
    d = history.column("dofs")
    out = {"eta": slope_fit(d, history.column("eta"), last=SLOPE_WINDOW)}
    err = history.column("true_error")
    if np.isfinite(err).all() and len(err):
        out["true_error"] = slope_fit(d, err, last=SLOPE_WINDOW)
    return {k: (None if not np.isfinite(v) else v) for k, v in out.items()}


def _field_cell_data(result: adapt.AdaptResult) -> dict:
    field = result.field
    mesh = field.mesh
    a, b = field.affine
    E = a + np.cross(b, mesh.centroids)
    return {
        "E_real": E.real,
        "E_imag": E.imag,
        "E_amplitude": np.sqrt((np.abs(E) ** 2).sum(1)),
        "eta": result.report.eta_T,
    }


def _run_one(cfg: RunConfig, tag: str) -> tuple[adapt.AdaptResult, dict]:
    exact = _exact_for(cfg)
    res = adapt.run(cfg.scene, cfg.wave, cfg.adapt, exact=exact)
    os.makedirs(cfg.output.directory, exist_ok=True)
    stem = os.path.join(cfg.output.directory, f"{cfg.output.prefix}_{tag}")
    res.log.write_csv(stem + "_log.csv")
    if cfg.output.vtk:
        write_vtk(stem + ".vtk", res.mesh, _field_cell_data(res), title=f"{cfg.output.prefix} {tag}")
    up, down = boundary_spectra(res.field, res.modeset)
    eff = diffraction_efficiencies(up, down, cfg.wave, cfg.scene.media)
    rep = res.report
    summary = {
        "run": tag,
        "config": cfg.source,
        "stop_reason": res.stop_reason,
        "iterations": len(res.log),
        "dofs": int(res.field.dofmap.ndof),
        "elements": int(res.mesh.n_elements),
        "eta": rep.eta,
        "t1": rep.t1,
        "t2": rep.t2,
        "N1": res.modeset.N1,
        "N2": res.modeset.N2,
        "slopes_last5": _slopes(res.log),
        "efficiency_total": eff.total,
        "reflected": {str(k): v for k, v in eff.reflected.items()},
        "transmitted": {str(k): v for k, v in eff.transmitted.items()},
    }
    if exact is not None:
        summary["true_error"] = res.log.column("true_error")[-1]
        summary["r_h"] = _cplx(zeroth_reflection(up, cfg.wave))
        summary["r_exact"] = _cplx(exact.r)
    with open(stem + "_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return res, summary


def cmd_solve(cfg: RunConfig, args) -> int:
    cfg = _override(cfg, args)
    tag = "uniform" if cfg.adapt.uniform else "adaptive"
    res, summary = _run_one(cfg, tag)
    print(
        f"{tag}: {summary['iterations']} iterations, {summary['dofs']} dofs, "
        f"eta={summary['eta']:.4e}, stop={res.stop_reason}, efficiency total={summary['efficiency_total']:.6f}"
    )
    return 0


def cmd_study(cfg: RunConfig, args) -> int:
    runs = {}
    for tag, uniform in (("adaptive", False), ("uniform", True)):
        runs[tag] = _run_one(_override(cfg, args, uniform=uniform), tag)
    column = "true_error" if _exact_for(cfg) is not None else "eta"
    levels = adapt.matched_levels(runs["adaptive"][0].log, runs["uniform"][0].log, column)
    study = {
        "error_measure": column,
        "slopes_last5": {tag: summary["slopes_last5"] for tag, (_, summary) in runs.items()},
        "matched_levels": [
            {"level": e, "uniform_dofs": u, "adaptive_dofs": a, "adaptive_fewer": a < u} for e, u, a in levels
        ],
    }
    out = _override(cfg, args).output
    path = os.path.join(out.directory, f"{out.prefix}_study.json")
    with open(path, "w") as fh:
        json.dump(study, fh, indent=2)
    for tag, (_, s) in runs.items():
        print(f"{tag}: dofs={s['dofs']} eta={s['eta']:.4e} slopes={s['slopes_last5']}")
    for e, u, a in levels:
        print(f"level {e:.4e}: uniform {u:.0f} dofs, adaptive {a:.0f} dofs")
    return 0


def format_mode_table(modeset, j=None) -> str:
    """Text table of one index set (``j``) or of the common set when ``N1 == N2``."""
    j = j or 1
    rows = [
        f"{'n1':>4} {'n2':>4} {'alpha1':>12} {'alpha2':>12} {'beta1':>26} {'beta2':>26} {'kind':>11}"
    ]
    prop = modeset.propagating(j)
    for m, p in zip(modeset.modes(j), prop):
        b1, b2 = m.beta1, m.beta2
        rows.append(
            f"{m.n[0]:>4d} {m.n[1]:>4d} {m.alpha[0]:>12.6f} {m.alpha[1]:>12.6f} "
            f"{b1.real:>12.6f}{b1.imag:+12.6f}j {b2.real:>12.6f}{b2.imag:+12.6f}j "
            f"{'propagating' if p else 'evanescent':>11}"
        )
    return "\n".join(rows)


def cmd_modes(cfg: RunConfig, args) -> int:
    if args.N is not None:
        N1 = N2 = args.N
    elif cfg.adapt.truncation:
        N1, N2 = cfg.adapt.truncation
    else:
        N1, N2 = adapt.choose_truncation(cfg.scene, cfg.wave, cfg.adapt.delta_trunc)
    ms = build_mode_set(cfg.wave, cfg.scene.media, cfg.scene.L1, cfg.scene.L2, N1, N2)
    if N1 == N2:
        print(format_mode_table(ms, 1))
    else:
        for j, N in ((1, N1), (2, N2)):
            print(f"# boundary {j}, N={N}")
            print(format_mode_table(ms, j))
    return 0


def cmd_audit(cfg: RunConfig, args) -> int:
    h = args.h or cfg.adapt.initial_h or adapt.default_initial_h(cfg.scene)
    mesh = build_initial_mesh(cfg.scene, h)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.refine_steps):
        mesh = refine(mesh, rng.choice(mesh.n_elements, size=min(args.batch, mesh.n_elements), replace=False))
    rep = mesh.audit()
    print(f"elements={mesh.n_elements} vertices={mesh.n_vertices}")
    for f in dataclasses.fields(rep):
        print(f"{f.name}: {getattr(rep, f.name)}")
    print("audit:", "ok" if rep.ok else "FAILED")
    return 0 if rep.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtngrating", description="Adaptive DtN edge-element solver for biperiodic gratings")
    p.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scene config (INI)")
        sp.add_argument("--output-dir", help="override [output] directory")

    def run_flags(sp):
        sp.add_argument("--tol", type=float)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--max-dofs", type=int)
        sp.add_argument("--solver", choices=("direct", "iterative"))

    s = sub.add_parser("solve", help="one adaptive (or uniform) run")
    common(s)
    run_flags(s)
    s.add_argument("--uniform", action="store_true", help="uniform refinement instead of marking")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("study", help="adaptive vs uniform convergence comparison")
    common(s)
    run_flags(s)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("modes", help="print the truncated mode table")
    common(s)
    s.add_argument("--N", type=int, help="use N1 = N2 = N instead of the decay criterion")
    s.set_defaults(func=cmd_modes)

    s = sub.add_parser("audit-mesh", help="build, optionally refine at random, and audit a mesh")
    common(s)
    s.add_argument("--h", type=float, help="initial mesh size")
    s.add_argument("--refine-steps", type=int, default=0)
    s.add_argument("--batch", type=int, default=1, help="elements marked per step")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s"
    )
    if not os.path.isfile(args.config):
        parser.error(f"config file not found: {args.config}")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except GratingError as exc:
        print(f"dtngrating: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
