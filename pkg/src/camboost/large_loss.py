"""Large-loss modification of assumed-negative labels (reject / correct).

Assumed-negative terms with the largest BCE loss are treated as suspected
false negatives. The share of terms modified grows linearly by ``delta_rel``
percent per epoch after a warmup.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .losses import weighted_bce
from .tensor import Tensor


class LLPolicy(enum.Enum):
    REJECT = "r"
    CORRECT_TEMP = "ct"
    CORRECT_PERM = "cp"

    @classmethod
    def parse(cls, value) -> "LLPolicy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"r": cls.REJECT, "reject": cls.REJECT, "ll-r": cls.REJECT,
                   "ct": cls.CORRECT_TEMP, "correcttemp": cls.CORRECT_TEMP, "ll-ct": cls.CORRECT_TEMP,
                   "cp": cls.CORRECT_PERM, "correctperm": cls.CORRECT_PERM, "ll-cp": cls.CORRECT_PERM}
        if key not in aliases:
            raise ConfigError(f"unknown large-loss policy {value!r}")
        return aliases[key]


# slope used per policy when none is given
DEFAULT_DELTA_REL = {LLPolicy.REJECT: 0.5, LLPolicy.CORRECT_TEMP: 0.2, LLPolicy.CORRECT_PERM: 0.1}


@dataclass(frozen=True)
class LLConfig:
    policy: LLPolicy = LLPolicy.REJECT
    delta_rel: Optional[float] = None  # percent per epoch; None -> policy default
    warmup_epochs: int = 1
    exclude_observed_negatives: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", LLPolicy.parse(self.policy))
        if self.delta_rel is None:
            object.__setattr__(self, "delta_rel", DEFAULT_DELTA_REL[self.policy])
        if self.delta_rel < 0:
            raise ConfigError(f"delta_rel must be >= 0, got {self.delta_rel}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")


@dataclass
class EpochCounters:
    epoch: int
    rate: float
    terms_modified: int = 0
    false_negatives_hit: int = 0
    true_negatives_hit: int = 0


@dataclass
class LLState:
    permanent_flips: set = field(default_factory=set)  # {(sample_id, class_index)}
    epochs: list = field(default_factory=list)  # EpochCounters, one per epoch

    def flip_mask(self, sample_ids: Sequence[int], num_classes: int) -> np.ndarray:
        mask = np.zeros((len(sample_ids), num_classes), dtype=bool)
        if self.permanent_flips:
            for r, sid in enumerate(sample_ids):
                for c in range(num_classes):
                    if (int(sid), c) in self.permanent_flips:
                        mask[r, c] = True
        return mask

    def begin_epoch(self, epoch: int, rate: float) -> EpochCounters:
        counters = EpochCounters(epoch, rate)
        self.epochs.append(counters)
        return counters


def modification_rate(epoch: int, config: LLConfig) -> float:
    """Fraction of assumed-negative terms modified in ``epoch`` (1-based)."""
    if epoch < 1:
        raise ConfigError(f"epoch must be >= 1, got {epoch}")
    if epoch <= config.warmup_epochs:
        return 0.0
    return min(config.delta_rel * (epoch - config.warmup_epochs), 100.0) / 100.0


def select_large_losses(terms: Sequence[tuple], rate: float) -> np.ndarray:
    """Mask over ``terms`` = [(sample_id, class_index, loss), ...] marking the
    floor(rate * N) largest losses.

    Ties: loss descending, then sample_id ascending, then class_index ascending.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"rate must lie in [0, 1], got {rate}")
    n = len(terms)
    mask = np.zeros(n, dtype=bool)
    k = int(np.floor(rate * n + 1e-9))
    if k == 0:
        return mask
    arr = np.asarray(terms, dtype=np.float64).reshape(n, 3)
    order = np.lexsort((arr[:, 1], arr[:, 0], -arr[:, 2]))
    mask[order[:k]] = True
    return mask


def select_batch(losses: np.ndarray, candidates: np.ndarray, sample_ids: Sequence[int],
                 rate: float) -> np.ndarray:
    """Batch form of :func:`select_large_losses` over a B×C loss grid.

    Only entries where ``candidates`` is True compete.
    """
    if losses.shape != candidates.shape:
        raise DimensionError(f"losses {losses.shape} and candidates {candidates.shape} differ")
    rows, cols = np.nonzero(candidates)
    ids = np.asarray(sample_ids)[rows]
    terms = np.stack([ids, cols, losses[rows, cols]], axis=1) if len(rows) else np.zeros((0, 3))
    picked = select_large_losses(terms, rate)
    mask = np.zeros_like(candidates, dtype=bool)
    mask[rows[picked], cols[picked]] = True
    return mask


def policy_targets_weights(targets: np.ndarray, mask: np.ndarray, policy: LLPolicy):
    """Per-term (targets, weights) after applying the policy to the selection."""
    policy = LLPolicy.parse(policy)
    t = np.array(targets, dtype=np.float64)
    w = np.ones_like(t)
    if policy is LLPolicy.REJECT:
        w[mask] = 0.0
    else:
        t[mask] = 1.0
    return t, w


def apply_policy(logits: Tensor, targets: np.ndarray, mask: np.ndarray, policy,
                 state: LLState, sample_ids: Sequence[int]) -> Tensor:
    """Modified batch loss for the selected terms; CorrectPerm also records flips."""
    policy = LLPolicy.parse(policy)
    t, w = policy_targets_weights(targets, mask, policy)
    if policy is LLPolicy.CORRECT_PERM:
        rows, cols = np.nonzero(mask)
        for r, c in zip(rows, cols):
            state.permanent_flips.add((int(sample_ids[r]), int(c)))
    return weighted_bce(logits, t, w)


def count_rejected_false_negatives(mask: np.ndarray, full_labels: np.ndarray) -> int:
    """Number of selected terms whose true label is positive."""
    mask = np.asarray(mask, dtype=bool)
    full = np.asarray(full_labels)
    if mask.shape != full.shape:
        raise DimensionError(f"mask {mask.shape} and labels {full.shape} differ")
    return int(np.count_nonzero(mask & (full == 1)))


LL_LOG_FIELDS = ["epoch", "policy", "rate", "terms_modified", "false_negatives_hit",
                 "true_negatives_hit"]


def write_ll_log(path, state: LLState, policy) -> None:
    policy = LLPolicy.parse(policy)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(LL_LOG_FIELDS)
        for ep in state.epochs:
            wr.writerow([ep.epoch, policy.value, repr(ep.rate), ep.terms_modified,
                         ep.false_negatives_hit, ep.true_negatives_hit])
