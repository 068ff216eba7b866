"""Experiment drivers shared by the CLI, the scripts and the acceptance suite.

A benchmark is a pair of synthetic datasets: a single-positive training set
(its 20% tail is held out for validation) and a fully labelled test set drawn
from a disjoint seed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .boostlu import BoostParams
from .data import Dataset, SyntheticSpec, generate_dataset
from .explain import compare_explanations, stats_row, summarize
from .large_loss import LLConfig, LLPolicy
from .metrics import mean_ap
from .network import CamNet, NetConfig, forward_cam, init_net
from .tensor import Tensor, no_grad
from .train import TrainConfig, TrainResult, predict, train

log = logging.getLogger(__name__)

TEST_SEED_OFFSET = 10_000

# Reduced profile for a single CPU core: half the default widths and a larger
# step size, which trains to a comparable mAP in about a third of the time.
QUICK_NET = NetConfig(channels=(8, 16))
QUICK_TRAIN = TrainConfig(lr=3e-3)


@dataclass(frozen=True)
class Benchmark:
    train: Dataset
    test: Dataset
    seed: int


def build_benchmark(spec: SyntheticSpec, test_samples: int = 500) -> Benchmark:
    train_ds = generate_dataset(replace(spec, label_mode="single_positive"))
    test_ds = generate_dataset(replace(spec, num_samples=test_samples, label_mode="full",
                                       seed=spec.seed + TEST_SEED_OFFSET))
    return Benchmark(train_ds, test_ds, spec.seed)


def net_config_for(ds: Dataset, base: NetConfig = NetConfig()) -> NetConfig:
    _, h, w = ds.image_shape
    return replace(base, in_channels=ds.images.shape[1], height=h, width=w,
                   num_classes=ds.num_classes)


def fit(bench: Benchmark, config: TrainConfig, net_config: NetConfig = NetConfig()) -> TrainResult:
    net = init_net(net_config_for(bench.train, net_config), config.seed)
    return train(net, bench.train, config)


def evaluate_map(net: CamNet, ds: Dataset, boost: Optional[BoostParams] = None) -> float:
    plain, boosted = predict(net, ds.images, boost)
    return mean_ap(boosted if boost is not None else plain, ds.full_labels)


# ---------------------------------------------------------------- ablation

@dataclass(frozen=True)
class AblationRow:
    boost_infer: bool
    boost_train: bool
    ll_r: bool

    @property
    def name(self) -> str:
        parts = [p for p, on in (("ll_r", self.ll_r), ("boost_train", self.boost_train),
                                 ("boost_infer", self.boost_infer)) if on]
        return "+".join(parts) or "an"


# BoostLU-in-inference, BoostLU-in-training, LL-R, in the usual table order
ABLATION_ROWS = (
    AblationRow(False, False, False),
    AblationRow(True, False, False),
    AblationRow(True, True, False),
    AblationRow(False, False, True),
    AblationRow(False, True, True),
    AblationRow(True, False, True),
    AblationRow(True, True, True),
)

ABLATION_FIELDS = ["row", "name", "boost_infer", "boost_train", "ll_r", "seed", "test_mAP",
                   "selected_epoch", "ll_fn_hits", "ll_tn_hits"]


def ablation_train_config(base: TrainConfig, boost_train: bool, ll_r: bool,
                          boost: BoostParams = BoostParams()) -> TrainConfig:
    # boost_infer is always set so that both selections (plain and boosted) get tracked
    return replace(base, boost_train=boost if boost_train else None, boost_infer=boost,
                   ll=LLConfig(LLPolicy.REJECT) if ll_r else None, full_labels=False)


def run_ablation(bench: Benchmark, base: TrainConfig = TrainConfig(),
                 net_config: NetConfig = NetConfig(), boost: BoostParams = BoostParams(),
                 cache: Optional[dict] = None) -> list[dict]:
    """Seven rows from four trainings: rows sharing (boost_train, ll_r) share one run.

    Each row evaluates the checkpoint selected for its own inference mode.
    """
    cache = {} if cache is None else cache
    rows = []
    for i, row in enumerate(ABLATION_ROWS, start=1):
        key = (row.boost_train, row.ll_r)
        if key not in cache:
            cache[key] = fit(bench, ablation_train_config(base, *key, boost), net_config)
        res = cache[key]
        sel = res.best_boost if row.boost_infer else res.best_plain
        fn = sum(r.ll_fn_hits for r in res.history)
        tn = sum(r.ll_tn_hits for r in res.history)
        rows.append({
            "row": i, "name": row.name, "boost_infer": int(row.boost_infer),
            "boost_train": int(row.boost_train), "ll_r": int(row.ll_r), "seed": base.seed,
            "test_mAP": evaluate_map(sel.net, bench.test, boost if row.boost_infer else None),
            "selected_epoch": sel.epoch, "ll_fn_hits": fn, "ll_tn_hits": tn,
        })
    return rows


def write_rows(path, rows: list[dict], fields: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()
                         if k in fields})


# ---------------------------------------------------------------- explanations

def collect_cams(net: CamNet, ds: Dataset, batch_size: int = 100) -> np.ndarray:
    out = []
    with no_grad():
        for i in range(0, len(ds), batch_size):
            out.append(forward_cam(net, Tensor(ds.images[i:i + batch_size])).scores.data)
    return np.concatenate(out)


def explanation_rows(net_a: CamNet, net_b: CamNet, ds: Dataset, fraction: float = 0.05,
                     limit: Optional[int] = None) -> list[dict]:
    """Compare the CAMs of two models on every true-positive (sample, class) of ``ds``."""
    n = len(ds) if limit is None else min(limit, len(ds))
    sub = ds.subset(np.arange(n))
    ca, cb = collect_cams(net_a, sub), collect_cams(net_b, sub)
    rows = []
    for i in range(n):
        pos = np.flatnonzero(sub.full_labels[i])
        for st in compare_explanations(ca[i], cb[i], pos, fraction):
            rows.append(stats_row(int(sub.sample_ids[i]), st, int(sub.observed[i, st.class_index])))
    return rows


def explanation_gap(full: CamNet, partial: CamNet, ds: Dataset, fraction: float = 0.05) -> dict:
    """Summary of full-label (a) vs assume-negative (b) CAMs on test positives."""
    return summarize(explanation_rows(full, partial, ds, fraction))


# ---------------------------------------------------------------- sweep

SWEEP_FIELDS = ["alpha", "beta", "test_mAP", "val_mAP", "selected_epoch", "seed"]


def sweep_train_config(base: TrainConfig, alpha: float, beta: float,
                       ll: Optional[LLConfig] = LLConfig(LLPolicy.CORRECT_TEMP)) -> TrainConfig:
    b = BoostParams(alpha, beta)
    return replace(base, boost_train=b, boost_infer=b, ll=ll, full_labels=False)


def run_sweep(bench: Benchmark, points: Iterable[tuple], base: TrainConfig = TrainConfig(),
              net_config: NetConfig = NetConfig(),
              ll: Optional[LLConfig] = LLConfig(LLPolicy.CORRECT_TEMP),
              cache: Optional[dict] = None) -> list[dict]:
    """One train+eval per (alpha, beta) point, BoostLU in training and inference."""
    cache = {} if cache is None else cache
    rows = []
    for alpha, beta in points:
        key = (float(alpha), float(beta))
        if key not in cache:
            cfg = sweep_train_config(base, *key, ll)
            res = fit(bench, cfg, net_config)
            sel = res.best_boost
            cache[key] = {"alpha": key[0], "beta": key[1],
                          "test_mAP": evaluate_map(sel.net, bench.test, cfg.boost_infer),
                          "val_mAP": sel.val_map, "selected_epoch": sel.epoch, "seed": base.seed}
        rows.append(cache[key])
    return rows


def grid(alphas: Iterable[float], betas: Iterable[float]) -> list[tuple]:
    return [(a, b) for a in alphas for b in betas]

