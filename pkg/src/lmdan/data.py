"""Synthetic drifted domain pairs, drop-rate modification, KL measurement,
balanced batching, and the feature-CSV interchange format.

CSV format (identical for source and target files): UTF-8, LF endings,
header ``label,f0,...,f{d-1}``, one sample per row, labels as nonnegative
integers, features as full-precision decimal floats (lossless for
float64).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .nn import Batch
from .numerics import STREAM_BATCHES, STREAM_DATA, STREAM_DRIFT, Rng, child_rng


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 in [0, class_count)
    domain: str  # "source" | "target"
    class_count: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a nonempty (n, d) matrix")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one integer per sample")
        if self.domain not in ("source", "target"):
            raise ValueError(f"unknown domain tag {self.domain!r}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError("labels out of range [0, class_count)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def label_distribution(self) -> np.ndarray:
        counts = self.class_counts().astype(np.float64)
        return counts / counts.sum()


@dataclass
class BlobConfig:
    """Gaussian class blobs on a circle; the target copy is rotated then
    shifted, so both domains share class structure under feature shift.

    ``phase_deg`` is the angle of class 0 on the circle; it fixes which
    class indices end up facing the shift direction.
    """

    class_count: int = 4
    per_class: int = 500
    dim: int = 2
    radius: float = 3.0
    sigma: float = 1.0
    shift: tuple[float, float] = (2.0, 0.0)
    rotation_deg: float = 30.0
    phase_deg: float = 180.0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        if self.dim != 2:
            raise ValueError("blob generation is 2-D only")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass
class DriftSpec:
    """Drop-rate modification: remove a fraction of the first half of
    classes from the source and of the latter half from the target.

    ``None`` class sets resolve at apply time to the defaults: the first
    floor(C/2) classes for the source, the remaining ones for the target.
    """

    source_drop_rate: float = 0.0
    target_drop_rate: float = 0.0
    source_classes: tuple[int, ...] | None = None
    target_classes: tuple[int, ...] | None = None

    def __post_init__(self):
        for name, rate in (
            ("source_drop_rate", self.source_drop_rate),
            ("target_drop_rate", self.target_drop_rate),
        ):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    def classes_for(self, domain: str, class_count: int) -> tuple[int, ...]:
        half = class_count // 2
        if domain == "source":
            chosen = self.source_classes
            default = tuple(range(half))
        else:
            chosen = self.target_classes
            default = tuple(range(half, class_count))
        if chosen is None:
            return default
        chosen = tuple(int(k) for k in chosen)
        if any(k < 0 or k >= class_count for k in chosen):
            raise ValueError(f"drift class set {chosen} outside [0, {class_count})")
        return chosen

    def rate_for(self, domain: str) -> float:
        return self.source_drop_rate if domain == "source" else self.target_drop_rate


def _rotation(angle_deg: float) -> np.ndarray:
    th = math.radians(angle_deg)
    return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])


def gen_blob_pair(cfg: BlobConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Balanced source/target pair with identical class-conditional shape.

    Source class k is Gaussian(mean_k, sigma^2 I) with mean_k on a circle
    at angle 2*pi*k/C; the target mean is rotate(mean_k) + shift. Draw
    order is fixed (source classes 0..C-1, then target), so one seed pins
    both domains.
    """
    rng = child_rng(seed, STREAM_DATA)
    C, n, d = cfg.class_count, cfg.per_class, cfg.dim
    angles = 2.0 * math.pi * np.arange(C) / C + math.radians(cfg.phase_deg)
    means_src = cfg.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    means_tgt = means_src @ _rotation(cfg.rotation_deg).T + np.asarray(cfg.shift)

    def sample(means, domain):
        feats = np.empty((C * n, d))
        labels = np.empty(C * n, dtype=np.int64)
        for k in range(C):
            feats[k * n : (k + 1) * n] = means[k] + rng.gaussian(0.0, cfg.sigma, (n, d))
            labels[k * n : (k + 1) * n] = k
        return LabeledDataset(feats, labels, domain, C)

    return sample(means_src, "source"), sample(means_tgt, "target")


def retained_count(n_k: int, rate: float) -> int:
    """Round-half-up retention with a floor of one sample per class."""
    return max(1, math.floor((1.0 - rate) * n_k + 0.5))


def apply_drift(ds: LabeledDataset, spec: DriftSpec, seed: int) -> LabeledDataset:
    """Drop a random fraction of each designated class, then reshuffle.

    Retained samples keep their exact feature values and labels; per-class
    retained counts follow :func:`retained_count` deterministically given
    the seed. Source and target use independent sub-streams of the same
    seed, so one seed drives a whole domain pair.
    """
    rng = child_rng(seed, STREAM_DRIFT, 0 if ds.domain == "source" else 1)
    classes = spec.classes_for(ds.domain, ds.class_count)
    rate = spec.rate_for(ds.domain)
    counts = ds.class_counts()
    for k in classes:
        if counts[k] == 0:
            raise ValueError(f"drift class {k} absent from {ds.domain} dataset")
    keep_parts = []
    for k in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == k)
        if k in classes:
            keep = retained_count(idx.size, rate)
            chosen = rng.choice_without_replacement(idx.size, keep)
            idx = idx[np.sort(chosen)]
        keep_parts.append(idx)
    kept = np.concatenate(keep_parts)
    order = rng.permutation(kept.size)
    kept = kept[order]
    return LabeledDataset(
        ds.features[kept], ds.labels[kept], ds.domain, ds.class_count
    )


def label_kl(src: LabeledDataset, tgt: LabeledDataset, smoothing: float = 0.0) -> float:
    """KL(source label distribution || target label distribution).

    Each empirical count is incremented by ``smoothing`` before
    normalization; natural log. Any empty target class requires
    smoothing > 0.
    """
    if src.class_count != tgt.class_count:
        raise ValueError("datasets disagree on class_count")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    cs = src.class_counts().astype(np.float64) + smoothing
    ct = tgt.class_counts().astype(np.float64) + smoothing
    if smoothing == 0.0 and np.any(ct == 0.0):
        raise ValueError(
            "target has an empty class; label_kl needs smoothing > 0 here"
        )
    p = cs / cs.sum()
    q = ct / ct.sum()
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def balanced_batches(
    src: LabeledDataset,
    tgt: LabeledDataset,
    batch: int,
    rng: Rng | int,
) -> Iterator[Batch]:
    """One epoch of paired batches: ``batch`` samples from each domain,
    drawn without replacement; floor(min(n_s, n_t) / batch) pairs.

    Target labels never leave this function. Pass a fresh ``Rng`` (or
    seed) per epoch to reshuffle; equal seeds give equal sequences.
    """
    if isinstance(rng, int):
        rng = child_rng(rng, STREAM_BATCHES)
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if batch > min(src.n, tgt.n):
        raise ValueError(
            f"batch {batch} exceeds a domain size (n_s={src.n}, n_t={tgt.n})"
        )
    perm_s = rng.permutation(src.n)
    perm_t = rng.permutation(tgt.n)
    pairs = min(src.n, tgt.n) // batch
    for b in range(pairs):
        s_idx = perm_s[b * batch : (b + 1) * batch]
        t_idx = perm_t[b * batch : (b + 1) * batch]
        yield Batch(
            src.features[s_idx], src.labels[s_idx], tgt.features[t_idx]
        )


def save_feature_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label," + ",".join(f"f{k}" for k in range(ds.dim)) + "\n")
        for i in range(ds.n):
            row = ",".join(repr(x) for x in ds.features[i])
            fh.write(f"{ds.labels[i]},{row}\n")


def load_feature_csv(path, domain: str, class_count: int | None = None) -> LabeledDataset:
    """Parse a feature CSV; malformed content errors with its line number."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "label" or len(header) < 2:
        raise ValueError(f"{path}:1: bad header {lines[0]!r}")
    dim = len(header) - 1
    if len(lines) == 1:
        raise ValueError(f"{path}: empty dataset (header only)")
    feats = np.empty((len(lines) - 1, dim))
    labels = np.empty(len(lines) - 1, dtype=np.int64)
    for ln, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise ValueError(
                f"{path}:{ln}: expected {dim + 1} cells, got {len(cells)}"
            )
        try:
            label = int(cells[0])
        except ValueError:
            raise ValueError(f"{path}:{ln}: non-integer label {cells[0]!r}") from None
        if label < 0:
            raise ValueError(f"{path}:{ln}: negative label {label}")
        try:
            feats[ln - 2] = [float(c) for c in cells[1:]]
        except ValueError:
            raise ValueError(f"{path}:{ln}: non-numeric feature cell") from None
        labels[ln - 2] = label
    inferred = int(labels.max()) + 1
    if class_count is None:
        class_count = inferred
    elif inferred > class_count:
        bad = int(np.argmax(labels >= class_count)) + 2
        raise ValueError(
            f"{path}:{bad}: label {labels[bad - 2]} out of range for "
            f"class_count={class_count}"
        )
    return LabeledDataset(feats, labels, domain, class_count)
