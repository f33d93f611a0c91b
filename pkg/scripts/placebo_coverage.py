"""Placebo fidelity: how often the subgroup-B estimate lies within 2 SE of 0.

Only subgroup A is affected in the ``subgroup_effect`` preset.

    python3 scripts/placebo_coverage.py --reps 200 --iterations 199
"""

import argparse
import warnings

from imputedid import BootstrapPlan, generate, placebo, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--iterations", type=int, default=199)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cluster", default="unit", choices=["unit", "cell", "group"])
    ap.add_argument("--flavor", default="pairs", choices=["pairs", "wild"])
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    hits = 0
    for r in range(args.reps):
        s = args.seed + r
        table, sched, _ = generate(preset("subgroup_effect", seed=s, cluster=args.cluster))
        rep = placebo(table, sched, {"religion": "B"},
                      plan=BootstrapPlan(args.iterations, seed=s, flavor=args.flavor))
        hits += abs(rep.att) <= 2 * rep.se
    print(f"cluster={args.cluster} flavor={args.flavor} reps={args.reps} "
          f"B={args.iterations}: coverage {hits / args.reps:.3f}")


if __name__ == "__main__":
    main()
