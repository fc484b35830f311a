"""Procedural datasets, stratified splits and the even IID partitioner."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngs
from .errors import DomainError, ShapeError


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    # (lo, hi) when inputs are bounded images; None for unbounded vectors
    value_range: tuple[float, float] | None = None
    image_side: int | None = None
    indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"inputs {self.inputs.shape} do not match {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        base = self.indices if self.indices is not None else np.arange(len(self))
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.num_classes,
                              self.value_range, self.image_side, base[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"x{j}" for j in range(self.dim)])
            for y, x in zip(self.labels, self.inputs):
                w.writerow([int(y)] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, path: str | Path, num_classes: int | None = None) -> "LabeledDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "label":
            raise ShapeError(f"{path}: expected a 'label,x0,x1,...' header")
        body = rows[1:]
        labels = np.array([int(r[0]) for r in body], dtype=np.int64)
        inputs = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(rows[0]) - 1)
        c = num_classes if num_classes is not None else (int(labels.max()) + 1 if body else 1)
        return cls(inputs, labels, c)


def make_blobs(num_classes: int, dim: int, n_per_class: int, spread: float,
               seed: int) -> LabeledDataset:
    """Gaussian classes centred on a radius-3 circle in the first two coordinates."""
    if num_classes < 2 or dim < 2 or n_per_class < 1 or spread < 0:
        raise DomainError("make_blobs needs C >= 2, d >= 2, n_per_class >= 1, spread >= 0")
    gen = rngs.stream(seed, "blobs")
    centers = blob_centers(num_classes, dim)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    inputs = centers[labels] + spread * gen.standard_normal((labels.size, dim))
    order = gen.permutation(labels.size)
    return LabeledDataset(inputs[order], labels[order], num_classes)


def blob_centers(num_classes: int, dim: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = np.zeros((num_classes, dim))
    centers[:, 0] = 3.0 * np.cos(angles)
    centers[:, 1] = 3.0 * np.sin(angles)
    return centers


def glyph_templates(num_classes: int, side: int) -> np.ndarray:
    """Fixed binary stroke patterns, one ``side x side`` image per class."""
    if not 6 <= side <= 16 or not 2 <= num_classes <= 10:
        raise DomainError("glyphs need side in [6, 16] and 2 <= C <= 10")
    lo, hi, mid = 1, side - 2, side // 2
    span = slice(lo, hi + 1)
    diag = np.arange(lo, hi + 1)
    out = np.zeros((10, side, side))
    out[0][span, mid] = 1                                  # vertical bar
    out[1][mid, span] = 1                                  # horizontal bar
    out[2][diag, diag] = 1                                 # diagonal
    out[3][diag, diag[::-1]] = 1                           # anti-diagonal
    out[4][span, [lo, hi]] = 1                             # box
    out[4][[lo, hi], span] = 1
    out[5][span, mid] = 1                                  # plus
    out[5][mid, span] = 1
    out[6][span, lo] = 1                                   # L
    out[6][hi, span] = 1
    out[7][lo, span] = 1                                   # T
    out[7][span, mid] = 1
    out[8][mid - 1:mid + 1, mid - 1:mid + 1] = 1           # dot
    out[9][span, [lo, hi]] = 1                             # two rails
    return out[:num_classes]


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def make_glyphs(num_classes: int, side: int, n_per_class: int, noise: float,
                shift_max: int, seed: int) -> LabeledDataset:
    """Shifted, noisy copies of per-class stroke templates, pixels clamped to [0, 1]."""
    if n_per_class < 1 or noise < 0 or shift_max < 0:
        raise DomainError("make_glyphs needs n_per_class >= 1, noise >= 0, shift_max >= 0")
    templates = glyph_templates(num_classes, side)
    gen = rngs.stream(seed, "glyphs")
    labels = np.repeat(np.arange(num_classes), n_per_class)
    shifts = gen.integers(-shift_max, shift_max + 1, size=(labels.size, 2))
    imgs = np.stack([_shift(templates[y], int(dy), int(dx)) for y, (dy, dx) in zip(labels, shifts)])
    imgs = imgs.reshape(labels.size, side * side) + noise * gen.standard_normal((labels.size, side * side))
    order = gen.permutation(labels.size)
    return LabeledDataset(np.clip(imgs, 0.0, 1.0)[order], labels[order], num_classes,
                          value_range=(0.0, 1.0), image_side=side)


def _stratified_take(labels: np.ndarray, num_classes: int, total: int,
                     gen: np.random.Generator) -> np.ndarray:
    """Pick ``total`` indices with per-class counts proportional to the class sizes."""
    counts = np.bincount(labels, minlength=num_classes)
    exact = total * counts / counts.sum()
    quota = np.floor(exact).astype(int)
    # hand out the remainder by largest fractional part, ties to the lower class index
    rem = total - quota.sum()
    order = sorted(range(num_classes), key=lambda c: (-(exact[c] - quota[c]), c))
    for c in order[:rem]:
        quota[c] += 1
    picked = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        picked.append(idx[gen.permutation(idx.size)[:quota[c]]])
    return np.concatenate(picked)


@dataclass(frozen=True)
class PartitionPlan:
    client_count: int
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.client_count < 1 or not 0 < self.fraction <= 1:
            raise DomainError("partition needs client_count >= 1 and fraction in (0, 1]")


def partition_iid(ds: LabeledDataset, plan: PartitionPlan) -> list[LabeledDataset]:
    """Split a stratified ``fraction`` of ``ds`` into equal, disjoint shards."""
    k = plan.client_count
    pool = int(np.floor(plan.fraction * len(ds) + 1e-9))
    if pool < k * ds.num_classes:
        raise DomainError(f"pool of {pool} samples is too small for {k} clients x {ds.num_classes} classes")
    per = pool // k
    gen = rngs.stream(plan.seed, rngs.PARTITION)
    chosen = _stratified_take(ds.labels, ds.num_classes, per * k, gen)
    chosen = chosen[gen.permutation(chosen.size)]
    return [ds.subset(chosen[i * per:(i + 1) * per]) for i in range(k)]


def split_train_val(ds: LabeledDataset, val_ratio: float,
                    seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if not 0 < val_ratio < 1:
        raise DomainError("val_ratio must lie strictly between 0 and 1")
    gen = rngs.stream(seed, "split")
    n_val = int(round(val_ratio * len(ds)))
    val = _stratified_take(ds.labels, ds.num_classes, n_val, gen)
    mask = np.ones(len(ds), dtype=bool)
    mask[val] = False
    train = np.flatnonzero(mask)
    return ds.subset(train[gen.permutation(train.size)]), ds.subset(val[gen.permutation(val.size)])
