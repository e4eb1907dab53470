"""Adaptive vs uniform refinement on Example 1 against the closed-form solution.

Writes both iteration logs as CSV and prints the last-five-iterate slopes and
the DOF counts at every matched error level.

    python scripts/convergence_study.py --max-dofs 200000 --out out/study
"""

import argparse
import logging
import os

from dtngrating import adapt, scenarios


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--max-dofs", type=int, default=200_000)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--out", default="out/study")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    scene, wave = scenarios.example1()
    exact = scenarios.ExactFlatSolution(wave, scene.top, scene.bottom)
    os.makedirs(args.out, exist_ok=True)
    logs = {}
    for tag, uniform in (("adaptive", False), ("uniform", True)):
        cfg = adapt.AdaptConfig(tol=1e-3, tau=args.tau, max_iter=60, max_dofs=args.max_dofs, uniform=uniform)
        res = adapt.run(scene, wave, cfg, exact=exact)
        res.log.write_csv(os.path.join(args.out, f"example1_{tag}.csv"))
        logs[tag] = res.log
        dofs = res.log.column("dofs")
        print(
            f"{tag}: {len(res.log)} iterations, final dofs {int(dofs[-1])}, "
            f"slope(error) {scenarios.slope_fit(dofs, res.log.column('true_error'), last=5):.3f}, "
            f"slope(eta) {scenarios.slope_fit(dofs, res.log.column('eta'), last=5):.3f}"
        )
    for level, u, a in adapt.matched_levels(logs["adaptive"], logs["uniform"]):
        print(f"error {level:.4e}: uniform {u:.0f} dofs, adaptive {a:.0f} dofs")


if __name__ == "__main__":
    main()
