"""Training loop: assume-negative (or full-label) BCE, optional BoostLU in the
forward pass, optional large-loss modification, Adam with a 10x head rate.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boostlu import BoostParams
from .data import Dataset, split_validation
from .errors import ConfigError, TrainingDivergedError
from .large_loss import (LLConfig, LLState, apply_policy, count_rejected_false_negatives,
                         modification_rate, select_batch)
from .losses import POSITIVE, NEGATIVE, bce_terms, weighted_bce
from .metrics import mean_ap
from .network import CamNet, forward_cam, pool_logits
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    head_lr_mult: float = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    boost_train: Optional[BoostParams] = None
    boost_infer: Optional[BoostParams] = None
    ll: Optional[LLConfig] = None
    full_labels: bool = False
    skip_boost_without_positives: bool = True
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or self.head_lr_mult <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")


class Adam:
    """Adam over a list of (tensor, learning rate) pairs."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [(p, float(lr)) for p, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p, _ in self.groups]
        self.v = [np.zeros_like(p.data) for p, _ in self.groups]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for (p, lr), m, v in zip(self.groups, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p, _ in self.groups:
            p.zero_grad()


def make_optimizer(net: CamNet, config: TrainConfig) -> Adam:
    head = {id(p) for p in net.head_parameters()}
    groups = [(p, config.lr * (config.head_lr_mult if id(p) in head else 1.0))
              for p in net.parameters()]
    return Adam(groups, config.adam_beta1, config.adam_beta2, config.adam_eps)


def predict(net: CamNet, images: np.ndarray, boost: Optional[BoostParams] = None,
            batch_size: int = 100) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """(plain logits, boosted logits or None), both N×C, from one CAM pass."""
    plain, boosted = [], []
    with no_grad():
        for i in range(0, len(images), batch_size):
            cam = forward_cam(net, Tensor(images[i:i + batch_size]))
            plain.append(pool_logits(cam).data)
            if boost is not None:
                boosted.append(pool_logits(cam, boost).data)
    c = net.num_classes
    plain_arr = np.concatenate(plain) if plain else np.zeros((0, c))
    return plain_arr, (np.concatenate(boosted) if boost is not None and boosted else None)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_map: float
    val_map_boost: float = float("nan")
    ll_rate: float = 0.0
    ll_modified: int = 0
    ll_fn_hits: int = 0
    ll_tn_hits: int = 0


@dataclass
class Selection:
    epoch: int
    val_map: float
    net: CamNet


@dataclass
class TrainResult:
    net: CamNet  # weights after the last epoch
    history: list
    best_plain: Selection  # best validation mAP without inference boost
    best_boost: Optional[Selection]  # best validation mAP with inference boost
    ll_state: Optional[LLState]
    config: TrainConfig

    @property
    def model(self) -> CamNet:
        """The selected model for the configured inference mode."""
        sel = self.best_boost if self.config.boost_infer is not None else self.best_plain
        return sel.net


def _training_targets(ds: Dataset, full: bool) -> np.ndarray:
    src = ds.full_labels == 1 if full else ds.observed == POSITIVE
    return src.astype(np.float64)


def train(net: CamNet, dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Train ``net`` in place and keep the best-validation snapshots."""
    train_ds, val_ds = split_validation(dataset, config.val_fraction)
    c = dataset.num_classes
    opt = make_optimizer(net, config)
    ll_state = LLState() if config.ll is not None else None

    base_targets = _training_targets(train_ds, config.full_labels)
    class_mask = None
    if config.boost_train is not None and config.skip_boost_without_positives:
        has_pos = base_targets.sum(axis=0) > 0
        if not has_pos.all():
            class_mask = has_pos
            log.info("BoostLU disabled in training for classes %s", np.flatnonzero(~has_pos).tolist())
    candidates_base = np.ones_like(base_targets, dtype=bool)
    if config.ll is not None and config.ll.exclude_observed_negatives and not config.full_labels:
        candidates_base = train_ds.observed != NEGATIVE

    def validate() -> tuple[float, float]:
        if len(val_ds) == 0:
            return float("nan"), float("nan")
        plain, boosted = predict(net, val_ds.images, config.boost_infer)
        vm = mean_ap(plain, val_ds.full_labels)
        vb = mean_ap(boosted, val_ds.full_labels) if boosted is not None else float("nan")
        return vm, vb

    vm, vb = validate()
    best_plain = Selection(0, vm, net.copy())
    best_boost = Selection(0, vb, net.copy()) if config.boost_infer is not None else None
    history = []

    n = len(train_ds)
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        rate = modification_rate(epoch, config.ll) if config.ll is not None else 0.0
        counters = ll_state.begin_epoch(epoch, rate) if ll_state is not None else None
        losses = []
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            ids = train_ds.sample_ids[idx]
            targets = base_targets[idx].copy()
            if ll_state is not None and ll_state.permanent_flips:
                targets[ll_state.flip_mask(ids, c)] = 1.0

            cam = forward_cam(net, Tensor(train_ds.images[idx]))
            logits = pool_logits(cam, config.boost_train, class_mask)
            if ll_state is not None and rate > 0:
                cand = candidates_base[idx] & (targets == 0)
                term_losses = bce_terms(logits.data, targets)
                mask = select_batch(term_losses, cand, ids, rate)
                fn = count_rejected_false_negatives(mask, train_ds.full_labels[idx])
                counters.terms_modified += int(mask.sum())
                counters.false_negatives_hit += fn
                counters.true_negatives_hit += int(mask.sum()) - fn
                loss = apply_policy(logits, targets, mask, config.ll.policy, ll_state, ids)
            else:
                loss = weighted_bce(logits, targets)

            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, step, value)
            losses.append(value)
            loss.backward()
            opt.step()
            opt.zero_grad()

        vm, vb = validate()
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), vm, vb, rate)
        if counters is not None:
            rec.ll_modified = counters.terms_modified
            rec.ll_fn_hits = counters.false_negatives_hit
            rec.ll_tn_hits = counters.true_negatives_hit
        history.append(rec)
        log.info("epoch %d loss %.4f val_mAP %.4f val_mAP_boost %.4f", epoch, rec.train_loss, vm, vb)
        # NaN-safe: an undefined score never blocks replacing an undefined best
        if not vm <= best_plain.val_map:
            best_plain = Selection(epoch, vm, net.copy())
        if best_boost is not None and not vb <= best_boost.val_map:
            best_boost = Selection(epoch, vb, net.copy())

    return TrainResult(net, history, best_plain, best_boost, ll_state, config)


HISTORY_FIELDS = ["epoch", "train_loss", "val_mAP", "val_mAP_boost", "ll_rate", "ll_modified",
                  "ll_fn_hits", "ll_tn_hits"]


def write_history(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HISTORY_FIELDS)
        for r in history:
            wr.writerow([r.epoch, repr(r.train_loss), repr(r.val_map), repr(r.val_map_boost),
                         repr(r.ll_rate), r.ll_modified, r.ll_fn_hits, r.ll_tn_hits])
