"""Evanescent-order decay between the inner planes and the DtN boundaries.

Solves Example 2 adaptively and prints, for every evanescent order and
component, the Fourier coefficient on b_j', on b_j and the predicted bound.

    python scripts/decay_diagnostic.py --max-dofs 100000 --slack 1.5
"""

import argparse

from dtngrating import adapt, scenarios


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--max-dofs", type=int, default=100_000)
    p.add_argument("--slack", type=float, default=1.5)
    p.add_argument("--all", action="store_true", help="print every row, not only the violations")
    args = p.parse_args()

    scene, wave = scenarios.example2()
    res = adapt.run(scene, wave, adapt.AdaptConfig(tol=1e-3, max_iter=60, max_dofs=args.max_dofs))
    rep = scenarios.decay_check(res.field, res.modeset, slack=args.slack)
    print(f"dofs {res.field.dofmap.ndof}, worst ratio {rep.worst_ratio:.3e}, ok {rep.ok}")
    print(f"{'j':>2} {'n':>10} {'c':>2} {'|E(b_j)|':>11} {'|E(b_j_in)|':>11} {'bound':>11}")
    for j, n, comp, outer, inner, bound in rep.rows:
        if args.all or outer > args.slack * bound:
            print(f"{j:2d} {str(n):>10} {comp:2d} {outer:11.3e} {inner:11.3e} {bound:11.3e}")


if __name__ == "__main__":
    main()
