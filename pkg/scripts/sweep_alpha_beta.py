"""BoostLU sensitivity to alpha (at beta=0) and to beta (at alpha=5).

Each point trains with LL-Ct plus BoostLU in training and inference.

    python scripts/sweep_alpha_beta.py --seed 0 --out results/sweep
"""

import argparse
from dataclasses import replace
from pathlib import Path

from camboost.data import SyntheticSpec
from camboost.experiments import (QUICK_NET, QUICK_TRAIN, SWEEP_FIELDS, build_benchmark,
                                  run_sweep, write_rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alphas", type=float, nargs="+", default=[1, 2, 3, 5, 8, 12])
    ap.add_argument("--betas", type=float, nargs="+", default=[-0.2, 0.0, 0.2])
    ap.add_argument("--out", type=Path, default=Path("results/sweep"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    bench = build_benchmark(SyntheticSpec(seed=args.seed))
    points = [(a, 0.0) for a in args.alphas] + [(5.0, b) for b in args.betas if b != 0.0]
    rows = run_sweep(bench, points, replace(QUICK_TRAIN, seed=args.seed), QUICK_NET)
    write_rows(args.out / f"sweep_seed{args.seed}.csv", rows, SWEEP_FIELDS)
    for r in rows:
        print(f"alpha={r['alpha']:<5g} beta={r['beta']:<5g} test mAP={r['test_mAP']:.4f}")


if __name__ == "__main__":
    main()
