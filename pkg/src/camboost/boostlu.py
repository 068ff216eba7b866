"""BoostLU: piecewise-linear boosting of class activation scores.

Scores at or above the threshold ``beta`` are scaled by ``alpha`` around
``beta``; scores below pass through unchanged. With ``beta = 0`` this is
``max(x, alpha * x)``. The knot itself belongs to the boosted branch, for
both the value (which is continuous there anyway) and the derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class BoostParams:
    alpha: float = 5.0
    beta: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.alpha) or self.alpha < 1.0:
            raise ConfigError(f"alpha must be a finite value >= 1, got {self.alpha}")
        if not math.isfinite(self.beta):
            raise ConfigError(f"beta must be finite, got {self.beta}")

    @property
    def is_identity(self) -> bool:
        return self.alpha == 1.0


def boostlu_general(x, alpha: float, beta: float):
    """alpha*x + (1-alpha)*beta where x >= beta, else x. Works on scalars and arrays.

    Evaluated as beta + alpha*(x - beta) so that f(beta) == beta exactly; alpha == 1
    returns the input unchanged.
    """
    if np.ndim(x) == 0:
        x = float(x)
        return beta + alpha * (x - beta) if x >= beta and alpha != 1.0 else x
    x = np.asarray(x, dtype=np.float64)
    if alpha == 1.0:
        return x.copy()
    return np.where(x >= beta, beta + alpha * (x - beta), x)


def boostlu(x, alpha: float):
    """max(x, alpha*x) for alpha >= 1."""
    if np.ndim(x) == 0:
        x = float(x)
        return max(x, alpha * x)
    return np.maximum(x, alpha * np.asarray(x, dtype=np.float64))


def boostlu_grad(x, alpha: float, beta: float = 0.0):
    """Per-element derivative: alpha on x >= beta, 1 below."""
    if np.ndim(x) == 0:
        return float(alpha) if float(x) >= beta else 1.0
    return np.where(np.asarray(x) >= beta, float(alpha), 1.0)


def boostlu_map(m: Tensor, params: BoostParams, class_mask: Optional[np.ndarray] = None) -> Tensor:
    """Taped elementwise BoostLU over a C×H×W (or N×C×H×W) map.

    ``class_mask`` (length C, bool) limits boosting to selected classes; the
    remaining channels pass through untouched.
    """
    x = m.data
    a, b = float(params.alpha), float(params.beta)
    boosted = x >= b
    if class_mask is not None:
        class_mask = np.asarray(class_mask, dtype=bool)
        if m.ndim < 3 or class_mask.shape != (m.shape[-3],):
            raise DimensionError(
                f"class_mask of shape {class_mask.shape} does not match map shape {m.shape}"
            )
        boosted = boosted & class_mask[:, None, None]
    out = x if a == 1.0 else np.where(boosted, b + a * (x - b), x)
    factor = np.where(boosted, a, 1.0)
    return Tensor._from_op(out, "boostlu", (m,), lambda g: (g * factor,))
