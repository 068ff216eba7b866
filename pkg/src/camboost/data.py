"""Synthetic multi-label images, partial-label construction and the dataset file.

Each positive class is rendered as one axis-aligned textured bright blob near
a class-specific canonical location. The texture is what lets a network with
a small receptive field tell classes apart; the location gives each class a
consistent spatial footprint for CAM comparisons.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DataError, FormatError
from .losses import POSITIVE, NEGATIVE, UNANNOTATED, LabelVector


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 6
    height: int = 32
    width: int = 32
    num_samples: int = 2000
    blob_min: int = 6
    blob_max: int = 10
    min_positives: int = 1
    max_positives: int = 3
    noise: float = 0.25
    jitter: int = 3
    label_mode: str = "single_positive"  # or "full"
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 1 or self.num_samples < 1:
            raise DataError("num_classes and num_samples must be positive")
        if not 1 <= self.blob_min <= self.blob_max:
            raise DataError(f"need 1 <= blob_min <= blob_max, got {self.blob_min}, {self.blob_max}")
        if self.blob_max > min(self.height, self.width):
            raise DataError(
                f"blob_max {self.blob_max} does not fit a {self.height}×{self.width} image")
        if not 1 <= self.min_positives <= self.max_positives <= self.num_classes:
            raise DataError("need 1 <= min_positives <= max_positives <= num_classes")
        if self.noise < 0 or self.jitter < 0:
            raise DataError("noise and jitter must be non-negative")
        if self.label_mode not in ("single_positive", "full"):
            raise DataError(f"label_mode must be 'single_positive' or 'full', got {self.label_mode!r}")


@dataclass
class Sample:
    image: np.ndarray  # 1×H×W
    full_labels: np.ndarray  # C, {0, 1}
    observed: LabelVector


@dataclass
class Dataset:
    images: np.ndarray  # N×1×H×W float64
    full_labels: np.ndarray  # N×C uint8
    observed: np.ndarray  # N×C int8 in {1, 0, -1}
    sample_ids: np.ndarray = None  # N, stable ids used by large-loss bookkeeping

    def __post_init__(self):
        n = self.images.shape[0]
        if self.sample_ids is None:
            self.sample_ids = np.arange(n)
        if self.full_labels.shape[0] != n or self.observed.shape != self.full_labels.shape:
            raise DataError("images, full labels and observed labels disagree in size")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return self.full_labels.shape[1]

    @property
    def image_shape(self) -> tuple:
        return self.images.shape[1:]

    def sample(self, i: int) -> Sample:
        return Sample(self.images[i], self.full_labels[i], LabelVector(tuple(self.observed[i])))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.full_labels[idx], self.observed[idx],
                       self.sample_ids[idx])

    def with_full_observed(self) -> "Dataset":
        obs = np.where(self.full_labels == 1, POSITIVE, NEGATIVE).astype(np.int8)
        return Dataset(self.images, self.full_labels, obs, self.sample_ids)

    def summary(self) -> dict:
        known = int(np.count_nonzero(self.observed != UNANNOTATED))
        return {
            "num_samples": len(self),
            "num_classes": self.num_classes,
            "class_frequency": self.full_labels.sum(axis=0).tolist(),
            "observed_positive_frequency": (self.observed == POSITIVE).sum(axis=0).tolist(),
            "mean_annotated_per_sample": known / max(len(self), 1),
            "mean_unannotated_per_sample": int(np.count_nonzero(self.observed == UNANNOTATED)) / max(len(self), 1),
            "mean_false_negatives_per_sample": int(np.count_nonzero(
                (self.observed != POSITIVE) & (self.full_labels == 1))) / max(len(self), 1),
        }


def split_validation(ds: Dataset, fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """(train, validation): the validation split is the deterministic tail."""
    n_val = int(round(len(ds) * fraction))
    cut = len(ds) - n_val
    return ds.subset(np.arange(cut)), ds.subset(np.arange(cut, len(ds)))


# ---------------------------------------------------------------------------
# rendering


def canonical_centers(num_classes: int, h: int, w: int) -> np.ndarray:
    """Class anchor points on a rows×cols grid covering the image."""
    rows = int(np.floor(np.sqrt(num_classes)))
    cols = int(np.ceil(num_classes / rows))
    centers = []
    for c in range(num_classes):
        r, q = divmod(c, cols)
        centers.append(((r + 0.5) * h / rows, (q + 0.5) * w / cols))
    return np.array(centers)


def class_texture(c: int, sh: int, sw: int) -> np.ndarray:
    i = np.arange(sh)[:, None]
    j = np.arange(sw)[None, :]
    period = 2 + c // 8
    kind = c % 8
    if kind == 0:
        pat = np.ones((sh, sw), dtype=bool)
    elif kind == 1:
        pat = (i % period == 0) | np.zeros((1, sw), dtype=bool)
    elif kind == 2:
        pat = (j % period == 0) | np.zeros((sh, 1), dtype=bool)
    elif kind == 3:
        pat = (i + j) % 2 == 0
    elif kind == 4:
        pat = ((i // 2) % 2 == 0) | np.zeros((1, sw), dtype=bool)
    elif kind == 5:
        pat = ((j // 2) % 2 == 0) | np.zeros((sh, 1), dtype=bool)
    elif kind == 6:
        pat = (i + j) % 3 == 0
    else:
        pat = (i - j) % 3 == 0
    return pat.astype(np.float64)


def blob_box(spec: SyntheticSpec, c: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """(top, left, height, width) of one blob for class ``c``."""
    cy, cx = canonical_centers(spec.num_classes, spec.height, spec.width)[c]
    sh, sw = rng.integers(spec.blob_min, spec.blob_max + 1, size=2)
    dy, dx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
    top = int(np.clip(round(cy - sh / 2 + dy), 0, spec.height - sh))
    left = int(np.clip(round(cx - sw / 2 + dx), 0, spec.width - sw))
    return top, left, int(sh), int(sw)


def canonical_region(spec: SyntheticSpec, c: int) -> tuple[int, int, int, int]:
    """Inclusive-exclusive (top, left, bottom, right) box every blob of class c fits in."""
    cy, cx = canonical_centers(spec.num_classes, spec.height, spec.width)[c]
    reach = spec.jitter + spec.blob_max / 2 + 1
    return (max(0, int(np.floor(cy - reach))), max(0, int(np.floor(cx - reach))),
            min(spec.height, int(np.ceil(cy + reach))), min(spec.width, int(np.ceil(cx + reach))))


def _draw_label_matrix(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros((spec.num_samples, spec.num_classes), dtype=np.uint8)
    counts = rng.integers(spec.min_positives, spec.max_positives + 1, size=spec.num_samples)
    for n, k in enumerate(counts):
        labels[n, rng.choice(spec.num_classes, size=k, replace=False)] = 1
    return labels


def to_single_positive(full_labels, rng: Union[int, np.random.Generator]) -> LabelVector:
    """Keep one uniformly chosen positive; everything else becomes unannotated."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    full = np.asarray(full_labels)
    pos = np.flatnonzero(full == 1)
    if pos.size == 0:
        raise DataError("cannot build a single-positive label from a label vector without positives")
    keep = pos[rng.integers(pos.size)]
    states = [UNANNOTATED] * full.size
    states[keep] = POSITIVE
    return LabelVector(tuple(states))


def generate_dataset(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    for _ in range(1000):
        labels = _draw_label_matrix(spec, rng)
        if labels.sum(axis=0).min() > 0:
            break
    else:
        raise DataError("could not draw labels covering every class; increase num_samples")

    h, w = spec.height, spec.width
    images = np.zeros((spec.num_samples, 1, h, w))
    for n in range(spec.num_samples):
        img = images[n, 0]
        for c in np.flatnonzero(labels[n]):
            top, left, sh, sw = blob_box(spec, c, rng)
            region = img[top:top + sh, left:left + sw]
            np.maximum(region, class_texture(c, sh, sw), out=region)
    if spec.noise > 0:
        images += spec.noise * rng.standard_normal(images.shape)

    if spec.label_mode == "full":
        observed = np.where(labels == 1, POSITIVE, NEGATIVE).astype(np.int8)
    else:
        observed = np.stack([to_single_positive(row, rng).as_array() for row in labels])
    return Dataset(images, labels, observed)


# ---------------------------------------------------------------------------
# container

_DATA_MAGIC = b"CAMBDATA"
_DATA_VERSION = 1
_DATA_HEADER = "<HIIII"


def dataset_bytes(ds: Dataset) -> bytes:
    n, ch, h, w = ds.images.shape
    if ch != 1:
        raise FormatError(f"dataset container stores single-channel images, got {ch} channels")
    c = ds.num_classes
    head = _DATA_MAGIC + struct.pack(_DATA_HEADER, _DATA_VERSION, c, h, w, n)
    rec = np.dtype([("img", "<f8", (h * w,)), ("full", "u1", (c,)), ("obs", "i1", (c,))])
    body = np.empty(n, dtype=rec)
    body["img"] = ds.images.reshape(n, h * w)
    body["full"] = ds.full_labels
    body["obs"] = ds.observed
    return head + body.tobytes()


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.write_bytes(dataset_bytes(ds))
    return path


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if not raw.startswith(_DATA_MAGIC):
        raise FormatError(f"{path}: not a camboost dataset")
    off = len(_DATA_MAGIC)
    version, c, h, w, n = struct.unpack_from(_DATA_HEADER, raw, off)
    if version != _DATA_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    off += struct.calcsize(_DATA_HEADER)
    rec = np.dtype([("img", "<f8", (h * w,)), ("full", "u1", (c,)), ("obs", "i1", (c,))])
    if len(raw) - off != n * rec.itemsize:
        raise FormatError(f"{path}: expected {n} records, size does not match")
    body = np.frombuffer(raw, dtype=rec, count=n, offset=off)
    return Dataset(body["img"].reshape(n, 1, h, w).astype(np.float64),
                   body["full"].astype(np.uint8), body["obs"].astype(np.int8))
