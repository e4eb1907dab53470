"""Effect of the marking fraction tau on Example 1.

For each tau, runs the adaptive loop to a DOF budget and reports the final
error, the fitted slope and the number of solves.

    python scripts/tau_sweep.py --taus 0.3 0.5 0.7 0.9 --max-dofs 50000
"""

import argparse

from dtngrating import adapt, scenarios


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--taus", type=float, nargs="+", default=[0.3, 0.5, 0.7, 0.9])
    p.add_argument("--max-dofs", type=int, default=50_000)
    args = p.parse_args()

    scene, wave = scenarios.example1()
    exact = scenarios.ExactFlatSolution(wave, scene.top, scene.bottom)
    print(f"{'tau':>5} {'solves':>6} {'dofs':>8} {'error':>11} {'slope':>7}")
    for tau in args.taus:
        cfg = adapt.AdaptConfig(tol=1e-3, tau=tau, max_iter=80, max_dofs=args.max_dofs)
        res = adapt.run(scene, wave, cfg, exact=exact)
        dofs, err = res.log.column("dofs"), res.log.column("true_error")
        print(f"{tau:5.2f} {len(res.log):6d} {int(dofs[-1]):8d} {err[-1]:11.4e} {scenarios.slope_fit(dofs, err, last=5):7.3f}")


if __name__ == "__main__":
    main()
