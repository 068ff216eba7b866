"""Binary cross-entropy losses for full and partial (assume-negative) labels.

Losses are computed from logits in softplus form:
``-log sigmoid(g) = softplus(-g)`` and ``-log(1 - sigmoid(g)) = softplus(g)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DataError, DimensionError
from .tensor import Tensor, as_tensor, sigmoid_array, softplus

POSITIVE, NEGATIVE, UNANNOTATED = 1, 0, -1


class LabelState(enum.IntEnum):
    POSITIVE = POSITIVE
    NEGATIVE = NEGATIVE
    UNANNOTATED = UNANNOTATED


@dataclass(frozen=True)
class LabelVector:
    """Observed label states over C categories, stored as int8 (1, 0, -1)."""

    states: tuple

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        bad = [s for s in states if s not in (POSITIVE, NEGATIVE, UNANNOTATED)]
        if bad:
            raise DataError(f"label states must be 1, 0 or -1, got {bad[0]}")
        object.__setattr__(self, "states", states)

    @classmethod
    def from_full(cls, full_labels: Iterable[int]) -> "LabelVector":
        return cls(tuple(POSITIVE if y else NEGATIVE for y in full_labels))

    def __len__(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        return np.array(self.states, dtype=np.int8)

    @property
    def positive(self) -> frozenset:
        return frozenset(i for i, s in enumerate(self.states) if s == POSITIVE)

    @property
    def negative(self) -> frozenset:
        return frozenset(i for i, s in enumerate(self.states) if s == NEGATIVE)

    @property
    def unannotated(self) -> frozenset:
        return frozenset(i for i, s in enumerate(self.states) if s == UNANNOTATED)

    def sparsity(self) -> tuple[int, int]:
        """(|I^p| + |I^n|, |I^phi|)."""
        return len(self.positive) + len(self.negative), len(self.unannotated)


@dataclass(frozen=True)
class NoiseDecomposition:
    """Split of the assumed-negative indices into true and false negatives."""

    true_negative: frozenset
    false_negative: frozenset

    @classmethod
    def from_labels(cls, partial: LabelVector, full_labels) -> "NoiseDecomposition":
        assumed = partial.negative | partial.unannotated
        fn = frozenset(i for i in assumed if full_labels[i])
        return cls(frozenset(assumed - fn), fn)

    def validate(self, partial: LabelVector) -> None:
        if self.true_negative & self.false_negative:
            raise DataError("true and false negative index sets overlap")
        if (self.true_negative | self.false_negative) != (partial.negative | partial.unannotated):
            raise DataError("decomposition does not cover exactly the assumed-negative labels")


def bce_pos(g: float) -> float:
    """-log sigmoid(g)."""
    return math.log1p(math.exp(-abs(g))) + max(-g, 0.0)


def bce_neg(g: float) -> float:
    """-log(1 - sigmoid(g))."""
    return math.log1p(math.exp(-abs(g))) + max(g, 0.0)


def bce_terms(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-term BCE values (no tape), targets in {0, 1}."""
    g = np.asarray(logits, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(g))) + np.maximum(g, 0.0) - targets * g


def weighted_bce(logits: Tensor, targets, weights=None) -> Tensor:
    """sum_i w_i * BCE(g_i, t_i) / (number of terms); taped.

    ``logits`` is C or N×C; the result is the per-sample mean over C,
    averaged over the batch.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"targets shape {t.shape} != logits shape {logits.shape}")
    if logits.size == 0:
        raise DimensionError("loss over zero categories")
    terms = softplus(logits) - logits * t
    if weights is not None:
        terms = terms * np.asarray(weights, dtype=np.float64)
    return terms.sum() * (1.0 / logits.size)


def _states_array(labels, shape) -> np.ndarray:
    if isinstance(labels, LabelVector):
        arr = labels.as_array()
    elif isinstance(labels, (list, tuple)) and labels and isinstance(labels[0], LabelVector):
        arr = np.stack([l.as_array() for l in labels])
    else:
        arr = np.asarray(labels)
    if arr.shape != shape:
        raise DimensionError(f"labels shape {arr.shape} != logits shape {shape}")
    return arr


def an_loss(logits: Tensor, labels) -> Tensor:
    """Assume-negative BCE: unannotated labels contribute exactly as negatives."""
    logits = as_tensor(logits)
    if logits.shape[-1] == 0:
        raise DimensionError("an_loss over zero categories")
    states = _states_array(labels, logits.shape)
    return weighted_bce(logits, (states == POSITIVE).astype(np.float64))


def full_loss(logits: Tensor, full_labels) -> Tensor:
    logits = as_tensor(logits)
    if logits.shape[-1] == 0:
        raise DimensionError("full_loss over zero categories")
    y = np.asarray(full_labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise DimensionError(f"labels shape {y.shape} != logits shape {logits.shape}")
    return weighted_bce(logits, y)


def logit_grad(g: float, target: str) -> float:
    """dL/dg for a single BCE term: sigmoid(g) - 1 (positive) or sigmoid(g) (negative)."""
    s = float(sigmoid_array(np.array([g]))[0])
    if target == "positive":
        return s - 1.0
    if target == "negative":
        return s
    raise ValueError(f"target must be 'positive' or 'negative', got {target!r}")


def gradient_gap(partial: LabelVector, decomposition: NoiseDecomposition) -> float:
    """Extra logit gradient mass under assume-negative training: |I^fn| / C."""
    decomposition.validate(partial)
    return len(decomposition.false_negative) / len(partial)
