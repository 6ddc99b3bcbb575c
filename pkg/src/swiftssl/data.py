"""Dataset container, binary I/O, few-shot sampling, and synthetic task generation.

All embeddings are stored on disk as little-endian float32 blobs and held in
memory as float64 so downstream gradient checks have numerical headroom.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

FORMAT_VERSION = 1

# blob names inside a bundle directory
_BLOBS = {
    "labeled": "labeled.f32",
    "labeled_labels": "labeled.labels.u32",
    "unlabeled_weak": "unlabeled.weak.f32",
    "unlabeled_strong": "unlabeled.strong.f32",
    "unlabeled_truth": "unlabeled.truth.u32",
    "retrieved": "retrieved.f32",
    "retrieved_labels": "retrieved.labels.u32",
    "test": "test.f32",
    "test_labels": "test.labels.u32",
    "text": "text.f32",
}


class BundleError(ValueError):
    """Raised for malformed bundle directories or invalid bundle contents."""


@dataclass
class EmbeddingTable:
    values: np.ndarray  # (count, dim) float64
    normalized: bool = False

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        if self.values.ndim != 2:
            raise BundleError(f"embedding table must be 2-D, got shape {self.values.shape}")
        if self.dim < 1:
            raise BundleError("embedding dim must be positive")
        if not np.all(np.isfinite(self.values)):
            raise BundleError("embedding table contains non-finite values")
        if self.normalized and self.count > 0:
            norms = np.linalg.norm(self.values, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-4:
                raise BundleError("table flagged normalized but rows are not unit norm")


def l2_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


@dataclass
class DatasetBundle:
    num_classes: int
    labeled: EmbeddingTable
    labeled_labels: np.ndarray
    unlabeled_weak: EmbeddingTable
    unlabeled_strong: EmbeddingTable  # (N_u * k, d), views of sample i at rows i*k..i*k+k-1
    strong_views: int
    retrieved: EmbeddingTable
    retrieved_labels: np.ndarray
    test: EmbeddingTable
    test_labels: np.ndarray
    text: EmbeddingTable
    class_names: list[str] = field(default_factory=list)
    unlabeled_truth: np.ndarray | None = None  # evaluation-only, never visible to losses

    @property
    def dim(self) -> int:
        return self.text.dim

    def validate(self) -> None:
        if self.num_classes < 2:
            raise BundleError("num_classes must be >= 2")
        if self.dim < 2:
            raise BundleError("dim must be >= 2")
        tables = [self.labeled, self.unlabeled_weak, self.unlabeled_strong,
                  self.retrieved, self.test, self.text]
        for t in tables:
            t.validate()
            if t.dim != self.dim:
                raise BundleError(f"dimension mismatch: {t.dim} != {self.dim}")
        if self.text.count != self.num_classes:
            raise BundleError("text table must have one row per class")
        if self.strong_views < 1:
            raise BundleError("strong_views must be >= 1")
        if self.unlabeled_strong.count != self.strong_views * self.unlabeled_weak.count:
            raise BundleError("unlabeled_strong count must be strong_views * unlabeled_weak count")
        for labels, table, name in [
            (self.labeled_labels, self.labeled, "labeled"),
            (self.retrieved_labels, self.retrieved, "retrieved"),
            (self.test_labels, self.test, "test"),
        ]:
            if len(labels) != table.count:
                raise BundleError(f"{name} label count does not match embedding count")
            if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise BundleError(f"{name} labels out of range [0, {self.num_classes})")
        if self.unlabeled_truth is not None:
            if len(self.unlabeled_truth) != self.unlabeled_weak.count:
                raise BundleError("unlabeled truth label count mismatch")
            if len(self.unlabeled_truth) and (
                self.unlabeled_truth.min() < 0 or self.unlabeled_truth.max() >= self.num_classes
            ):
                raise BundleError("unlabeled truth labels out of range")


def _write_f32(path: str, x: np.ndarray) -> None:
    np.ascontiguousarray(x, dtype="<f4").tofile(path)


def _write_u32(path: str, x: np.ndarray) -> None:
    np.ascontiguousarray(x, dtype="<u4").tofile(path)


def _read_f32(path: str, count: int, dim: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != count * dim:
        raise BundleError(f"{os.path.basename(path)}: expected {count * dim} floats, found {raw.size}")
    return raw.reshape(count, dim).astype(np.float64)


def _read_u32(path: str, count: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u4")
    if raw.size != count:
        raise BundleError(f"{os.path.basename(path)}: expected {count} labels, found {raw.size}")
    return raw.astype(np.int64)


def save_bundle(bundle: DatasetBundle, path: str) -> None:
    """Write a bundle directory atomically (stage into a temp dir, then rename)."""
    bundle.validate()
    parent = os.path.dirname(os.path.abspath(path)) or "."
    tmp = tempfile.mkdtemp(prefix=".bundle-", dir=parent)
    try:
        manifest = {
            "format_version": FORMAT_VERSION,
            "dim": bundle.dim,
            "num_classes": bundle.num_classes,
            "strong_views": bundle.strong_views,
            "normalized": bool(bundle.labeled.normalized),
            "counts": {
                "labeled": bundle.labeled.count,
                "unlabeled": bundle.unlabeled_weak.count,
                "retrieved": bundle.retrieved.count,
                "test": bundle.test.count,
            },
            "class_names": list(bundle.class_names),
            "has_unlabeled_truth": bundle.unlabeled_truth is not None,
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        _write_f32(os.path.join(tmp, _BLOBS["labeled"]), bundle.labeled.values)
        _write_u32(os.path.join(tmp, _BLOBS["labeled_labels"]), bundle.labeled_labels)
        _write_f32(os.path.join(tmp, _BLOBS["unlabeled_weak"]), bundle.unlabeled_weak.values)
        _write_f32(os.path.join(tmp, _BLOBS["unlabeled_strong"]), bundle.unlabeled_strong.values)
        if bundle.unlabeled_truth is not None:
            _write_u32(os.path.join(tmp, _BLOBS["unlabeled_truth"]), bundle.unlabeled_truth)
        _write_f32(os.path.join(tmp, _BLOBS["retrieved"]), bundle.retrieved.values)
        _write_u32(os.path.join(tmp, _BLOBS["retrieved_labels"]), bundle.retrieved_labels)
        _write_f32(os.path.join(tmp, _BLOBS["test"]), bundle.test.values)
        _write_u32(os.path.join(tmp, _BLOBS["test_labels"]), bundle.test_labels)
        _write_f32(os.path.join(tmp, _BLOBS["text"]), bundle.text.values)
        if os.path.exists(path):
            shutil.rmtree(path)
        os.rename(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_bundle(path: str) -> DatasetBundle:
    """Load and validate a bundle directory.

    Rows are L2-normalized on load when the manifest does not claim
    normalization, so logits downstream are always cosine-scale.
    """
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise BundleError(f"missing manifest: {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported format_version: {manifest.get('format_version')}")
    dim = int(manifest["dim"])
    num_classes = int(manifest["num_classes"])
    k = int(manifest["strong_views"])
    normalized = bool(manifest["normalized"])
    counts = manifest["counts"]

    def table(name: str, count: int) -> EmbeddingTable:
        vals = _read_f32(os.path.join(path, _BLOBS[name]), count, dim)
        if not normalized:
            vals = l2_normalize(vals)
        return EmbeddingTable(vals, normalized=True)

    n_l = int(counts["labeled"])
    n_u = int(counts["unlabeled"])
    n_r = int(counts["retrieved"])
    n_t = int(counts["test"])
    truth = None
    if manifest.get("has_unlabeled_truth"):
        truth = _read_u32(os.path.join(path, _BLOBS["unlabeled_truth"]), n_u)
    bundle = DatasetBundle(
        num_classes=num_classes,
        labeled=table("labeled", n_l),
        labeled_labels=_read_u32(os.path.join(path, _BLOBS["labeled_labels"]), n_l),
        unlabeled_weak=table("unlabeled_weak", n_u),
        unlabeled_strong=table("unlabeled_strong", n_u * k),
        strong_views=k,
        retrieved=table("retrieved", n_r),
        retrieved_labels=_read_u32(os.path.join(path, _BLOBS["retrieved_labels"]), n_r),
        test=table("test", n_t),
        test_labels=_read_u32(os.path.join(path, _BLOBS["test_labels"]), n_t),
        text=table("text", num_classes),
        class_names=list(manifest.get("class_names", [])),
        unlabeled_truth=truth,
    )
    bundle.validate()
    return bundle


def sample_few_shot(
    values: np.ndarray, labels: np.ndarray, k: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pick k examples per class from a labeled pool.

    Returns (selected_indices, remainder_indices); together they partition the
    pool. Deterministic given seed.
    """
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    chosen: list[np.ndarray] = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise ValueError(f"class {c} has only {len(idx)} examples, need {k}")
        chosen.append(rng.choice(idx, size=k, replace=False))
    selected = np.sort(np.concatenate(chosen))
    mask = np.zeros(len(labels), dtype=bool)
    mask[selected] = True
    remainder = np.flatnonzero(~mask)
    return selected, remainder


@dataclass
class SyntheticSpec:
    num_classes: int = 50
    dim: int = 64
    labeled_per_class: int = 16
    unlabeled_per_class: int = 40
    retrieved_per_class: int = 20
    test_per_class: int = 20
    noise: float = 0.18
    text_noise: float = 0.15
    strong_noise: float = 0.3
    strong_views: int = 4
    retrieved_label_noise: float = 0.0
    retrieved_shift: float = 0.0
    imbalance: float = 0.0  # exponent for unlabeled class counts; 0 = balanced
    drop_rate: float = 0.1  # coordinate-zeroing probability for strong views
    nuisance_dims: int = 0   # shared high-variance subspace (class-uninformative)
    nuisance_scale: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2 or self.dim < 2:
            raise ValueError("need num_classes >= 2 and dim >= 2")
        for name in ("labeled_per_class", "unlabeled_per_class",
                     "retrieved_per_class", "test_per_class"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("noise", "text_noise", "strong_noise", "retrieved_shift"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.retrieved_label_noise <= 1.0:
            raise ValueError("retrieved_label_noise must be in [0, 1]")
        if self.strong_views < 1:
            raise ValueError("strong_views must be >= 1")
        if self.nuisance_dims < 0 or self.nuisance_dims > self.dim:
            raise ValueError("nuisance_dims must be in [0, dim]")
        if self.nuisance_scale < 0:
            raise ValueError("nuisance_scale must be >= 0")


def _class_samples(rng, mean: np.ndarray, n: int, noise: float,
                   nuisance: np.ndarray | None = None,
                   nuisance_scale: float = 0.0) -> np.ndarray:
    x = mean[None, :] + noise * rng.standard_normal((n, mean.size))
    if nuisance is not None and nuisance_scale > 0:
        coeffs = nuisance_scale * rng.standard_normal((n, nuisance.shape[1]))
        x = x + coeffs @ nuisance.T
    return l2_normalize(x)


def make_synthetic(spec: SyntheticSpec) -> DatasetBundle:
    """Generate a seeded synthetic task with the same structure as a real one.

    Class means are uniform on the unit sphere; samples are noisy copies of
    their class mean, renormalized. Retrieved samples get a fixed per-class
    shift (domain gap) and uniformly flipped labels at the given rate.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    c, d = spec.num_classes, spec.dim
    means = l2_normalize(rng.standard_normal((c, d)))
    nuisance = None
    if spec.nuisance_dims > 0 and spec.nuisance_scale > 0:
        # shared high-variance subspace, uninformative about class identity
        q, _ = np.linalg.qr(rng.standard_normal((d, spec.nuisance_dims)))
        nuisance = q

    # unlabeled class counts, optionally skewed by a power law over class index
    weights = (1.0 / np.arange(1, c + 1)) ** spec.imbalance
    total_u = spec.unlabeled_per_class * c
    u_counts = np.maximum(1, np.round(total_u * weights / weights.sum()).astype(int))
    if spec.unlabeled_per_class == 0:
        u_counts = np.zeros(c, dtype=int)

    lab_x, lab_y = [], []
    u_weak, u_truth, u_strong = [], [], []
    ret_x, ret_y = [], []
    test_x, test_y = [], []
    shifts = l2_normalize(rng.standard_normal((c, d))) * spec.retrieved_shift
    for ci in range(c):
        lab_x.append(_class_samples(rng, means[ci], spec.labeled_per_class, spec.noise,
                                    nuisance, spec.nuisance_scale))
        lab_y.append(np.full(spec.labeled_per_class, ci))
        base = _class_samples(rng, means[ci], int(u_counts[ci]), spec.noise,
                              nuisance, spec.nuisance_scale)
        u_weak.append(base)
        u_truth.append(np.full(int(u_counts[ci]), ci))
        for row in base:
            views = row[None, :] + spec.strong_noise * rng.standard_normal((spec.strong_views, d))
            keep = rng.random((spec.strong_views, d)) >= spec.drop_rate
            views = views * keep
            u_strong.append(l2_normalize(views))
        shifted = means[ci] + shifts[ci]
        ret = _class_samples(rng, shifted, spec.retrieved_per_class, spec.noise,
                             nuisance, spec.nuisance_scale)
        ret_x.append(ret)
        ret_y.append(np.full(spec.retrieved_per_class, ci))
        test_x.append(_class_samples(rng, means[ci], spec.test_per_class, spec.noise,
                                     nuisance, spec.nuisance_scale))
        test_y.append(np.full(spec.test_per_class, ci))

    ret_y = np.concatenate(ret_y) if ret_y else np.zeros(0, dtype=int)
    if spec.retrieved_label_noise > 0 and len(ret_y):
        flip = rng.random(len(ret_y)) < spec.retrieved_label_noise
        offsets = rng.integers(1, c, size=len(ret_y))
        ret_y = np.where(flip, (ret_y + offsets) % c, ret_y)

    text = l2_normalize(means + spec.text_noise * rng.standard_normal((c, d)))
    n_u = int(u_counts.sum())

    def tbl(parts, rows, dflt_dim=d):
        if parts:
            vals = np.concatenate(parts).reshape(rows, dflt_dim)
        else:
            vals = np.zeros((0, dflt_dim))
        return EmbeddingTable(vals, normalized=True)

    bundle = DatasetBundle(
        num_classes=c,
        labeled=tbl(lab_x, spec.labeled_per_class * c),
        labeled_labels=np.concatenate(lab_y) if lab_y else np.zeros(0, dtype=int),
        unlabeled_weak=tbl(u_weak, n_u),
        unlabeled_strong=tbl(u_strong, n_u * spec.strong_views),
        strong_views=spec.strong_views,
        retrieved=tbl(ret_x, spec.retrieved_per_class * c),
        retrieved_labels=ret_y,
        test=tbl(test_x, spec.test_per_class * c),
        test_labels=np.concatenate(test_y) if test_y else np.zeros(0, dtype=int),
        text=EmbeddingTable(text, normalized=True),
        class_names=[f"class_{i}" for i in range(c)],
        unlabeled_truth=np.concatenate(u_truth) if n_u else np.zeros(0, dtype=int),
    )
    bundle.validate()
    return bundle


def subset_bundle(bundle: DatasetBundle, labeled_idx: np.ndarray) -> DatasetBundle:
    """Restrict the labeled split to the given pool indices (few-shot resampling)."""
    return replace(
        bundle,
        labeled=EmbeddingTable(bundle.labeled.values[labeled_idx],
                               normalized=bundle.labeled.normalized),
        labeled_labels=bundle.labeled_labels[labeled_idx],
    )
