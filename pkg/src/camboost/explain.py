"""Diagnostics that compare class activation maps from two models.

Spearman correlation measures whether two maps rank pixels the same way;
top/bottom-fraction means measure the scale of the strongest and weakest
attribution scores. A centred 2-D Gaussian serves as a structure-free
control map.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from typing import Iterable, Optional

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetricError
from .network import Cam


def spearman(a, b) -> float:
    """Pearson correlation of average ranks."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise DimensionError(f"spearman needs two equal-length inputs of size >= 2, got {a.size}, {b.size}")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise UndefinedMetricError("spearman correlation undefined for a constant input")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    r = float(np.dot(ra, rb) / math.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))
    return max(-1.0, min(1.0, r))


def extreme_count(n: int, fraction: float) -> int:
    if not 0.0 < fraction <= 0.5:
        raise ValueError(f"fraction must lie in (0, 0.5], got {fraction}")
    # guard against 0.05 * 60 = 3.0000000000000004
    return max(1, math.ceil(fraction * n - 1e-9))


def extreme_fraction_means(values, fraction: float = 0.05) -> tuple[float, float]:
    """(mean of the k largest, mean of the k smallest), k = ceil(fraction * n)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    k = extreme_count(v.size, fraction)
    part = np.partition(v, (k - 1, v.size - k))
    return float(part[v.size - k:].mean()), float(part[:k].mean())


def gaussian_control_map(h: int, w: int) -> np.ndarray:
    """Unit-peak Gaussian centred at ((H-1)/2, (W-1)/2), sigma = min(H, W)/4."""
    if h < 1 or w < 1:
        raise DimensionError(f"control map needs H, W >= 1, got {h}×{w}")
    sigma = min(h, w) / 4.0
    i = np.arange(h)[:, None] - (h - 1) / 2.0
    j = np.arange(w)[None, :] - (w - 1) / 2.0
    return np.exp(-(i ** 2 + j ** 2) / (2.0 * sigma ** 2))


@dataclass
class ExplanationStats:
    class_index: int
    spearman: float  # nan when undefined
    top_mean_a: float
    top_mean_b: float
    bottom_mean_a: float
    bottom_mean_b: float
    fraction: float
    spearman_gaussian: float = float("nan")  # control map vs map a


def _maps(cam, sample: Optional[int]) -> np.ndarray:
    s = cam.scores.data if isinstance(cam, Cam) else np.asarray(cam, dtype=np.float64)
    return s if sample is None else s[sample]


def _safe_spearman(a, b) -> float:
    try:
        return spearman(a, b)
    except UndefinedMetricError:
        return float("nan")


def compare_explanations(cam_a, cam_b, positive_classes: Iterable[int], fraction: float = 0.05,
                         sample: Optional[int] = None) -> list[ExplanationStats]:
    """Per-class comparison of two C×H×W maps; undefined correlations become NaN."""
    ma, mb = _maps(cam_a, sample), _maps(cam_b, sample)
    if ma.shape != mb.shape or ma.ndim != 3:
        raise DimensionError(f"CAM shapes differ or are not C×H×W: {ma.shape} vs {mb.shape}")
    control = gaussian_control_map(*ma.shape[1:])
    out = []
    for c in positive_classes:
        ta, ba = extreme_fraction_means(ma[c], fraction)
        tb, bb = extreme_fraction_means(mb[c], fraction)
        out.append(ExplanationStats(int(c), _safe_spearman(ma[c], mb[c]), ta, tb, ba, bb,
                                    fraction, _safe_spearman(control, ma[c])))
    return out


ANALYSIS_FIELDS = ["sample_id", "class_index", "spearman", "spearman_gaussian", "top_mean_a",
                   "top_mean_b", "bottom_mean_a", "bottom_mean_b", "label_state"]


def write_analysis_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=ANALYSIS_FIELDS)
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()
                         if k in ANALYSIS_FIELDS})


def stats_row(sample_id: int, st: ExplanationStats, label_state: int) -> dict:
    d = asdict(st)
    d.pop("fraction")
    d["sample_id"] = sample_id
    d["label_state"] = label_state
    return d


def summarize(rows: list[dict]) -> dict:
    """Medians/means over rows, skipping undefined correlations (counted)."""
    sp = np.array([r["spearman"] for r in rows], dtype=float)
    sg = np.array([r["spearman_gaussian"] for r in rows], dtype=float)
    return {
        "n": len(rows),
        "undefined_spearman": int(np.isnan(sp).sum()),
        "median_spearman": float(np.nanmedian(sp)) if np.isfinite(sp).any() else float("nan"),
        "median_spearman_gaussian": float(np.nanmedian(sg)) if np.isfinite(sg).any() else float("nan"),
        "mean_top_a": float(np.mean([r["top_mean_a"] for r in rows])) if rows else float("nan"),
        "mean_top_b": float(np.mean([r["top_mean_b"] for r in rows])) if rows else float("nan"),
        "mean_bottom_a": float(np.mean([r["bottom_mean_a"] for r in rows])) if rows else float("nan"),
        "mean_bottom_b": float(np.mean([r["bottom_mean_b"] for r in rows])) if rows else float("nan"),
    }
