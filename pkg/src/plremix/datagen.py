"""Synthetic class-blob datasets, label-noise injection and feature augmentations."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SeedLike = int | np.random.Generator | None


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with noisy labels.

    ``true_labels`` is held aside for evaluation and diagnostics; nothing on
    the training path reads it.
    """

    features: np.ndarray
    noisy_labels: np.ndarray
    true_labels: np.ndarray
    num_classes: int
    seed: int | None = None

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.noisy_labels.shape != (n,) or self.true_labels.shape != (n,):
            raise ValueError("label vectors must have one entry per row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        for labels in (self.noisy_labels, self.true_labels):
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def clean_mask(self) -> np.ndarray:
        return self.noisy_labels == self.true_labels

    def realized_noise(self) -> float:
        return float(np.mean(~self.clean_mask())) if len(self) else 0.0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            features=self.features[idx],
            noisy_labels=self.noisy_labels[idx],
            true_labels=self.true_labels[idx],
        )

    def digest(self) -> str:
        """SHA-256 over the exact bytes of features and both label vectors."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.noisy_labels, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.true_labels, dtype=np.int64).tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "symmetric"
    ratio: float = 0.0
    mapping: dict[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError("noise ratio must lie in [0, 1]")
        if self.kind == "asymmetric":
            if self.mapping is None:
                raise ValueError("asymmetric noise needs a class mapping")
            for k, v in self.mapping.items():
                if k == v:
                    raise ValueError(f"asymmetric mapping sends class {k} to itself")


@dataclass(frozen=True)
class AugmentSpec:
    weak_sigma: float = 0.1
    strong_sigma: float = 0.4
    strong_dropout_p: float = 0.2
    num_weak: int = 2
    num_strong: int = 2

    def __post_init__(self):
        if not 0.0 <= self.weak_sigma <= self.strong_sigma:
            raise ValueError("need 0 <= weak_sigma <= strong_sigma")
        if not 0.0 <= self.strong_dropout_p < 1.0:
            raise ValueError("strong_dropout_p must lie in [0, 1)")
        if self.num_weak < 1 or self.num_strong < 1:
            raise ValueError("augmentation counts must be positive")


def _centroids(C: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    if C <= dim:
        # scaled orthonormal frame: every pair is exactly `separation` apart
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return q[:, :C].T * (separation / np.sqrt(2.0))
    # more classes than dimensions: E||c_i - c_j|| = separation * sqrt(2 dim) >= separation
    return rng.standard_normal((C, dim)) * separation


def make_blobs(C: int, n_per_class: int, dim: int, separation: float = 10.0,
               spread: float = 1.0, seed: int | None = 0) -> Dataset:
    """Isotropic Gaussian blobs, one per class, with clean labels."""
    if C < 1 or n_per_class < 1:
        raise ValueError("C and n_per_class must be positive")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if separation <= 0 or spread <= 0:
        raise ValueError("separation and spread must be positive")
    rng = np.random.default_rng(seed)
    centers = _centroids(C, dim, separation, rng)
    labels = np.repeat(np.arange(C), n_per_class)
    x = centers[labels] + spread * rng.standard_normal((C * n_per_class, dim))
    return Dataset(x, labels.copy(), labels.copy(), C, seed)


def make_train_test(C: int, n_per_class: int, n_test_per_class: int, dim: int,
                    separation: float = 10.0, spread: float = 1.0,
                    seed: int | None = 0) -> tuple[Dataset, Dataset]:
    """Draw train and clean test sets from the same blob centroids."""
    full = make_blobs(C, n_per_class + n_test_per_class, dim, separation, spread, seed)
    per = n_per_class + n_test_per_class
    offs = np.arange(C)[:, None] * per
    train_idx = (offs + np.arange(n_per_class)).ravel()
    test_idx = (offs + np.arange(n_per_class, per)).ravel()
    return full.subset(train_idx), full.subset(test_idx)


def nearest_class_map(ds: Dataset) -> dict[int, int]:
    """Map each class to the class whose mean is closest (ties -> lowest index)."""
    C = ds.num_classes
    means = np.stack([ds.features[ds.true_labels == k].mean(axis=0) for k in range(C)])
    d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return {k: int(np.argmin(d[k])) for k in range(C)}


def inject_noise(ds: Dataset, spec: NoiseSpec, seed: SeedLike = 0) -> Dataset:
    """Corrupt the noisy labels; symmetric redraws over all C classes, own class included."""
    rng = as_rng(seed)
    n = len(ds)
    selected = rng.random(n) < spec.ratio
    noisy = ds.noisy_labels.copy()
    if spec.kind == "symmetric":
        draws = rng.integers(0, ds.num_classes, size=n)
        noisy[selected] = draws[selected]
    else:
        lut = np.arange(ds.num_classes)
        for k, v in spec.mapping.items():
            lut[k] = v
        noisy[selected] = lut[noisy[selected]]
    return replace(ds, noisy_labels=noisy, true_labels=ds.true_labels.copy())


def augment(x: np.ndarray, spec: AugmentSpec, strength: str, seed: SeedLike = None) -> np.ndarray:
    """Gaussian jitter; the strong view additionally zeroes coordinates at random.

    Works on a single vector or a batch of rows.
    """
    rng = as_rng(seed)
    x = np.asarray(x, dtype=float)
    if strength == "weak":
        return x + spec.weak_sigma * rng.standard_normal(x.shape)
    if strength == "strong":
        out = x + spec.strong_sigma * rng.standard_normal(x.shape)
        keep = rng.random(x.shape) >= spec.strong_dropout_p
        return out * keep
    raise ValueError(f"strength must be 'weak' or 'strong', got {strength!r}")


def dump_csv(ds: Dataset, path: str | Path) -> None:
    header = [f"f{j}" for j in range(ds.dim)] + ["y_noisy", "y_true"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, yn, yt in zip(ds.features, ds.noisy_labels, ds.true_labels):
            w.writerow([repr(float(v)) for v in row] + [int(yn), int(yt)])


def load_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-2:] != ["y_noisy", "y_true"]:
        raise ValueError(f"{path}: expected trailing y_noisy,y_true columns")
    d = len(header) - 2
    feats = np.array([[float(v) for v in r[:d]] for r in body], dtype=float).reshape(len(body), d)
    yn = np.array([int(r[d]) for r in body], dtype=np.int64)
    yt = np.array([int(r[d + 1]) for r in body], dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(yn.max(initial=-1), yt.max(initial=-1)) + 1)
    return Dataset(feats, yn, yt, num_classes)
