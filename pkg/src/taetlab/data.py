"""Long-tailed dataset construction and seeded batch iteration.

Datasets are immutable (feature, label) collections with features in
[0, 1]^dim so adversarial box clipping to [0, 1] is meaningful. Long-tailed
training sets are built by subsampling a balanced source with the standard
exponential profile count[i] = round(n_max * ir^(-i / (C - 1))); class 0 is
the head, the last class the tail.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "LongTailDataset",
    "ImbalanceProfile",
    "longtail_counts",
    "subsample_longtail",
    "gen_gaussian_mixture",
    "split_per_class",
    "load_idx_array",
    "load_csv_dataset",
    "load_external",
    "write_csv_dataset",
    "batches",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled sample collection; labels are contiguous 0..C-1."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = _freeze(np.asarray(self.features, dtype=np.float64))
        labs = _freeze(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2 or labs.ndim != 1 or feats.shape[0] != labs.shape[0]:
            raise ValueError("features must be (n, dim) and labels (n,)")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class LongTailDataset(Dataset):
    """Dataset carrying its declared imbalance ratio; counts must honor it."""

    declared_ir: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.declared_ir < 1.0:
            raise ValueError("imbalance ratio must be >= 1")
        counts = self.class_counts
        nonzero = counts[counts > 0]
        actual = nonzero.max() / nonzero.min()
        # rounding of the exponential profile can shift the realized ratio slightly
        expected_tail = _round_half_up(counts.max() / self.declared_ir)
        if nonzero.min() != expected_tail and abs(actual - self.declared_ir) > 0.5 * self.declared_ir / nonzero.min() + 1e-9:
            raise ValueError(
                f"class counts (max {counts.max()}, min {nonzero.min()}) do not match declared IR {self.declared_ir}"
            )


@dataclass(frozen=True)
class ImbalanceProfile:
    """Exponential class-count profile for a target imbalance ratio."""

    num_classes: int
    n_max: int
    ir: float

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_max < 1:
            raise ValueError("n_max must be positive")
        if self.ir < 1.0:
            raise ValueError("imbalance ratio must be >= 1")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def longtail_counts(profile: ImbalanceProfile) -> np.ndarray:
    """count[i] = round(n_max * ir^(-i/(C-1))); rejects profiles that hit 0."""
    c = profile.num_classes
    expo = -np.arange(c) / (c - 1)
    counts = np.array([_round_half_up(profile.n_max * profile.ir**e) for e in expo], dtype=np.int64)
    if (counts < 1).any():
        raise ValueError(f"profile produces an empty class: counts={counts.tolist()}")
    return counts


def subsample_longtail(source: Dataset, profile: ImbalanceProfile, seed: int) -> LongTailDataset:
    """Seeded per-class uniform subsample (without replacement) of a balanced source."""
    if profile.num_classes != source.num_classes:
        raise ValueError("profile class count does not match source")
    counts = longtail_counts(profile)
    rng = np.random.default_rng(np.random.SeedSequence([0x5AB5A, int(seed)]))
    keep: list[np.ndarray] = []
    for c, want in enumerate(counts):
        idx = np.flatnonzero(source.labels == c)
        if idx.size < want:
            raise ValueError(f"class {c} has {idx.size} source samples, profile needs {want}")
        keep.append(rng.choice(idx, size=want, replace=False))
    order = np.concatenate(keep)
    return LongTailDataset(
        features=source.features[order],
        labels=source.labels[order],
        num_classes=source.num_classes,
        declared_ir=float(profile.ir),
    )


def gen_gaussian_mixture(num_classes: int, dim: int, class_separation: float, samples_per_class: int, seed: int) -> Dataset:
    """Balanced isotropic Gaussian mixture, min-max normalized into [0, 1]^dim.

    Class means sit on a circle of radius class_separation / 2 in the first
    two feature dimensions (so two classes are class_separation apart);
    remaining dimensions are pure unit-variance noise.
    """
    if num_classes < 2 or dim < 2:
        raise ValueError("need num_classes >= 2 and dim >= 2")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([0x6A0551A, int(seed)]))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = 0.5 * class_separation * np.cos(angles)
    means[:, 1] = 0.5 * class_separation * np.sin(angles)

    n = num_classes * samples_per_class
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    feats = rng.standard_normal((n, dim)) + means[labels]

    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    feats = (feats - lo) / (hi - lo)
    return Dataset(features=feats, labels=labels, num_classes=num_classes)


def split_per_class(dataset: Dataset, held_out_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-class split into (remainder, held_out); both keep the normalization."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5B117, int(seed)]))
    held, rest = [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size <= held_out_per_class:
            raise ValueError(f"class {c} has only {idx.size} samples, cannot hold out {held_out_per_class}")
        perm = rng.permutation(idx)
        held.append(perm[:held_out_per_class])
        rest.append(perm[held_out_per_class:])
    rest_idx = np.concatenate(rest)
    held_idx = np.concatenate(held)
    make = lambda idx: Dataset(dataset.features[idx], dataset.labels[idx], dataset.num_classes)
    return make(rest_idx), make(held_idx)


# ---------------------------------------------------------------------------
# External formats: IDX (big-endian binary) and CSV with a leading label column.

_IDX_DTYPES = {0x08: ("u1", 1), 0x09: ("i1", 1), 0x0B: (">i2", 2), 0x0C: (">i4", 4), 0x0D: (">f4", 4), 0x0E: (">f8", 8)}


def load_idx_array(path) -> np.ndarray:
    """Parse one IDX file (magic: 0x00 0x00 dtype ndim, then big-endian dims, then payload)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header at byte {len(raw)} (need 4)")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", raw[:4])
    if zero1 != 0 or zero2 != 0:
        raise ValueError(f"{path}: bad IDX magic at byte 0: {raw[:4].hex()}")
    if dtype_code not in _IDX_DTYPES:
        raise ValueError(f"{path}: unknown IDX dtype code 0x{dtype_code:02x} at byte 2")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated IDX dims at byte {len(raw)} (need {header_len})")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    np_dtype, itemsize = _IDX_DTYPES[dtype_code]
    expected = int(np.prod(dims)) * itemsize
    actual = len(raw) - header_len
    if actual != expected:
        raise ValueError(f"{path}: IDX payload has {actual} bytes, expected {expected} for dims {dims}")
    return np.frombuffer(raw, dtype=np_dtype, offset=header_len).reshape(dims).astype(np.float64)


def _scale_unit(feats: np.ndarray) -> np.ndarray:
    """Scale into [0,1] only when values fall outside, so unit data round-trips."""
    lo, hi = feats.min(), feats.max()
    if lo >= 0.0 and hi <= 1.0:
        return feats
    if hi == lo:
        return np.zeros_like(feats)
    return (feats - lo) / (hi - lo)


def _remap_labels(labels: np.ndarray) -> tuple[np.ndarray, dict[int, int]]:
    uniq = np.unique(labels)
    mapping = {int(orig): new for new, orig in enumerate(uniq)}
    if all(k == v for k, v in mapping.items()) and uniq.size == uniq.max() + 1:
        return labels.astype(np.int64), mapping
    remapped = np.searchsorted(uniq, labels)
    return remapped.astype(np.int64), mapping


def load_csv_dataset(path) -> tuple[Dataset, dict[int, int]]:
    """CSV with header ``label,f0,f1,...``; returns the dataset and the label mapping."""
    rows: list[list[float]] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: line 1: expected header starting with 'label', got {header[:3]}")
        width = len(header) - 1
        if width < 1:
            raise ValueError(f"{path}: line 1: header declares no feature columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise ValueError(f"{path}: line {lineno}: expected {width + 1} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: no data rows")
    feats = _scale_unit(np.asarray(rows, dtype=np.float64))
    labs, mapping = _remap_labels(np.asarray(labels, dtype=np.int64))
    return Dataset(feats, labs, num_classes=int(labs.max()) + 1), mapping


def load_external(path, format: str, labels_path=None) -> tuple[Dataset, dict[int, int]]:
    """Ingest an external dataset. ``csv`` needs one file; ``idx`` needs features + labels files."""
    if format == "csv":
        return load_csv_dataset(path)
    if format == "idx":
        if labels_path is None:
            raise ValueError("idx ingestion needs a labels_path alongside the feature file")
        feats = load_idx_array(path)
        labels = load_idx_array(labels_path)
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise ValueError(f"label file shape {labels.shape} does not match {feats.shape[0]} feature records")
        feats = _scale_unit(feats.reshape(feats.shape[0], -1))
        labs, mapping = _remap_labels(labels.astype(np.int64))
        return Dataset(feats, labs, num_classes=int(labs.max()) + 1), mapping
    raise ValueError(f"unknown format {format!r} (expected 'idx' or 'csv')")


def write_csv_dataset(path, dataset: Dataset) -> None:
    """Export to the ingestion CSV schema; float repr round-trips bit-exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.feature_dim)])
        for y, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(y)] + [repr(float(v)) for v in row])


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int):
    """Seeded per-epoch shuffle into batches; the final partial batch is kept.

    The order is a pure function of (dataset, batch_size, seed, epoch), and the
    concatenation of the yielded batches is a permutation of the dataset.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([0xBA7C4, int(seed), int(epoch)]))
    order = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = order[start : start + batch_size]
        yield dataset.features[idx], dataset.labels[idx]
