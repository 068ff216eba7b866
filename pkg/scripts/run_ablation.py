"""Seven-row BoostLU / LL-R ablation over several seeds.

    python scripts/run_ablation.py --seeds 0 1 2 --out results/ablation
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from camboost.data import SyntheticSpec
from camboost.experiments import (ABLATION_FIELDS, QUICK_NET, QUICK_TRAIN, build_benchmark,
                                  run_ablation, write_rows)
from camboost.network import NetConfig
from camboost.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("results/ablation"))
    ap.add_argument("--full-size", action="store_true",
                    help="default 16/32-channel net at lr 1e-3 instead of the quick profile")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    net_cfg, base = (NetConfig(), TrainConfig()) if args.full_size else (QUICK_NET, QUICK_TRAIN)
    args.out.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for seed in args.seeds:
        bench = build_benchmark(SyntheticSpec(seed=seed))
        rows = run_ablation(bench, replace(base, seed=seed), net_cfg)
        write_rows(args.out / f"ablation_seed{seed}.csv", rows, ABLATION_FIELDS)
        all_rows += rows

    print(f"{'row':>3}  {'configuration':<30} {'mean mAP':>9}  per seed")
    for i in range(1, 8):
        vals = [r["test_mAP"] for r in all_rows if r["row"] == i]
        name = next(r["name"] for r in all_rows if r["row"] == i)
        print(f"{i:>3}  {name:<30} {np.mean(vals):9.4f}  " + " ".join(f"{v:.4f}" for v in vals))


if __name__ == "__main__":
    main()
