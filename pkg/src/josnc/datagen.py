"""Seeded synthetic blob datasets with symmetric / asymmetric / open-set noise.

The generator mirrors the open-set benchmark construction: a handful of
"known" classes plus extra classes whose samples are mixed into training with
labels drawn from the known label space. Hidden ground-truth tags (true label,
noise kind) live in a separate structure so the training path physically never
sees them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CLEAN = 0
ID_NOISY = 1
OOD_NOISY = 2

NOISE_KIND_NAMES = {CLEAN: "CLEAN", ID_NOISY: "ID_NOISY", OOD_NOISY: "OOD_NOISY"}

_MAGIC = b"JSNC1"
_TAGS_MAGIC = b"JSNCT"


class DataGenError(ValueError):
    pass


@dataclass
class NoiseSpec:
    kind: str                 # "symmetric" | "asymmetric"
    rate_id: float            # in-distribution corruption rate
    ood_class_count: int = 0

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise DataGenError(f"unknown noise kind: {self.kind!r}")
        # rate 0 is the documented no-op; rates >= 1 or < 0 are rejected
        if not (0.0 <= self.rate_id < 1.0):
            raise DataGenError(f"rate_id must be in [0, 1), got {self.rate_id}")
        if self.ood_class_count < 0:
            raise DataGenError("ood_class_count must be >= 0")


@dataclass
class TrainingSet:
    """The fields the trainer is allowed to see."""
    x: np.ndarray               # (N, D) float64
    observed_labels: np.ndarray  # (N,) int64, in [0, C_id)
    ids: np.ndarray              # (N,) int64, unique


@dataclass
class TagTable:
    """Hidden evaluation-only tags, aligned with TrainingSet.ids."""
    ids: np.ndarray
    true_labels: np.ndarray   # over the full label space incl. OOD classes
    noise_kinds: np.ndarray   # CLEAN / ID_NOISY / OOD_NOISY

    def as_dict(self) -> dict:
        return {int(i): (int(t), int(k))
                for i, t, k in zip(self.ids, self.true_labels, self.noise_kinds)}


@dataclass
class BlobDataset:
    train: TrainingSet
    tags: TagTable
    test_x: np.ndarray
    test_y: np.ndarray
    n_id_classes: int
    n_ood_classes: int
    dim: int
    spread: float
    centroids: np.ndarray = field(repr=False, default=None)


def make_blobs(n_id_classes: int, n_ood_classes: int, per_class: int, dim: int,
               spread: float, seed: int, test_per_class: int = 100,
               knn_k: int = 10) -> BlobDataset:
    """Gaussian blob classes; OOD classes appear only in the training split.

    Deterministic for a fixed seed. The held-out test set is drawn from ID
    classes only and carries true labels.
    """
    if n_id_classes < 2 or per_class < 1 or test_per_class < 1:
        raise DataGenError("need >= 2 ID classes and positive per-class counts")
    if dim < 2:
        raise DataGenError(f"dim must be >= 2, got {dim}")
    if per_class < knn_k + 1:
        raise DataGenError(
            f"per_class={per_class} too small for K={knn_k} nearest neighbors")
    if spread < 0:
        raise DataGenError("spread must be non-negative")

    n_total_classes = n_id_classes + n_ood_classes
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB10B]))
    centroids = rng.normal(0.0, 1.0, size=(n_total_classes, dim))
    # centroids are distinct with probability 1; make it an invariant
    diffs = centroids[:, None, :] - centroids[None, :, :]
    dists = np.sqrt((diffs ** 2).sum(-1)) + np.eye(n_total_classes)
    if dists.min() <= 1e-9:
        raise DataGenError("degenerate centroid draw")  # pragma: no cover

    xs, trues = [], []
    for c in range(n_total_classes):
        pts = centroids[c] + spread * rng.normal(size=(per_class, dim))
        xs.append(pts)
        trues.append(np.full(per_class, c, dtype=np.int64))
    x = np.concatenate(xs)
    true_labels = np.concatenate(trues)
    n = x.shape[0]
    ids = np.arange(n, dtype=np.int64)

    is_ood = true_labels >= n_id_classes
    observed = true_labels.copy()
    # OOD samples get placeholder ID-space labels; inject_noise redraws them
    observed[is_ood] = rng.integers(0, n_id_classes, size=int(is_ood.sum()))
    noise_kinds = np.where(is_ood, OOD_NOISY, CLEAN).astype(np.int64)

    test_xs, test_ys = [], []
    for c in range(n_id_classes):
        pts = centroids[c] + spread * rng.normal(size=(test_per_class, dim))
        test_xs.append(pts)
        test_ys.append(np.full(test_per_class, c, dtype=np.int64))

    return BlobDataset(
        train=TrainingSet(x=x, observed_labels=observed, ids=ids),
        tags=TagTable(ids=ids.copy(), true_labels=true_labels, noise_kinds=noise_kinds),
        test_x=np.concatenate(test_xs),
        test_y=np.concatenate(test_ys),
        n_id_classes=n_id_classes,
        n_ood_classes=n_ood_classes,
        dim=dim,
        spread=spread,
        centroids=centroids,
    )


def inject_noise(dataset: BlobDataset, spec: NoiseSpec, seed: int) -> BlobDataset:
    """Corrupt observed labels in place of the clean construction.

    Symmetric: corrupted labels are uniform over the other C_id - 1 classes.
    Asymmetric: class c maps to its circular successor (c + 1) mod C_id.
    OOD samples always get labels drawn uniformly from the ID label space and
    keep their OOD_NOISY tag regardless of the assigned label.
    """
    if spec.ood_class_count != dataset.n_ood_classes:
        raise DataGenError(
            f"spec expects {spec.ood_class_count} OOD classes, dataset has "
            f"{dataset.n_ood_classes}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4015E]))
    c_id = dataset.n_id_classes
    true_labels = dataset.tags.true_labels
    observed = dataset.train.observed_labels.copy()
    noise_kinds = dataset.tags.noise_kinds.copy()

    is_ood = true_labels >= c_id
    observed[is_ood] = rng.integers(0, c_id, size=int(is_ood.sum()))
    noise_kinds[is_ood] = OOD_NOISY

    id_idx = np.flatnonzero(~is_ood)
    observed[id_idx] = true_labels[id_idx]
    noise_kinds[id_idx] = CLEAN
    n_corrupt = int(round(spec.rate_id * id_idx.size))
    if n_corrupt > 0:
        victims = rng.choice(id_idx, size=n_corrupt, replace=False)
        if spec.kind == "symmetric":
            # uniform over the C_id - 1 non-original classes
            shift = rng.integers(1, c_id, size=n_corrupt)
            observed[victims] = (true_labels[victims] + shift) % c_id
        else:
            observed[victims] = (true_labels[victims] + 1) % c_id
        noise_kinds[victims] = ID_NOISY

    return BlobDataset(
        train=TrainingSet(x=dataset.train.x, observed_labels=observed,
                          ids=dataset.train.ids),
        tags=TagTable(ids=dataset.tags.ids, true_labels=true_labels,
                      noise_kinds=noise_kinds),
        test_x=dataset.test_x,
        test_y=dataset.test_y,
        n_id_classes=dataset.n_id_classes,
        n_ood_classes=dataset.n_ood_classes,
        dim=dataset.dim,
        spread=dataset.spread,
        centroids=dataset.centroids,
    )


def augment_views(x: np.ndarray, rng: np.random.Generator,
                  jitter_sigma: float, mask_rate: float):
    """Two independent stochastic views of a sample batch.

    Each view is additive isotropic Gaussian jitter followed by independent
    coordinate masking (zeroing). Works on a single vector or an (N, D) batch.
    """
    v = _augment_one(x, rng, jitter_sigma, mask_rate)
    v_prime = _augment_one(x, rng, jitter_sigma, mask_rate)
    return v, v_prime


def _augment_one(x, rng, jitter_sigma, mask_rate):
    x = np.asarray(x, dtype=np.float64)
    v = x + jitter_sigma * rng.normal(size=x.shape) if jitter_sigma > 0 else x.copy()
    if mask_rate > 0:
        v = np.where(rng.random(size=x.shape) < mask_rate, 0.0, v)
    return v


# ---------------------------------------------------------------------------
# flat binary serialization
# ---------------------------------------------------------------------------
#
# Main file (little-endian):
#   magic "JSNC1" | u32 n_train | u32 n_test | u32 dim | u16 n_id | u16 n_ood
#   n_train x (u64 id, u16 observed_label, dim * f32 features)
#   n_test  x (u64 id, u16 label,          dim * f32 features)
# Hidden tags live in a "<path>.tags" sidecar so the training-path reader can
# be physically prevented from seeing them:
#   magic "JSNCT" | u32 n | n x (u64 id, u16 true_label, u8 noise_kind)

def save_dataset(path: str, dataset: BlobDataset) -> None:
    n_train = dataset.train.x.shape[0]
    n_test = dataset.test_x.shape[0]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIIHH", n_train, n_test, dataset.dim,
                            dataset.n_id_classes, dataset.n_ood_classes))
        _write_records(f, dataset.train.ids, dataset.train.observed_labels,
                       dataset.train.x)
        test_ids = np.arange(n_test, dtype=np.int64)
        _write_records(f, test_ids, dataset.test_y, dataset.test_x)
    with open(path + ".tags", "wb") as f:
        f.write(_TAGS_MAGIC)
        f.write(struct.pack("<I", n_train))
        for i, t, k in zip(dataset.tags.ids, dataset.tags.true_labels,
                           dataset.tags.noise_kinds):
            f.write(struct.pack("<QHB", int(i), int(t), int(k)))


def _write_records(f, ids, labels, x):
    feats = np.ascontiguousarray(x, dtype="<f4")
    for i in range(len(ids)):
        f.write(struct.pack("<QH", int(ids[i]), int(labels[i])))
        f.write(feats[i].tobytes())


def load_training_data(path: str):
    """Training-path reader: yields features + observed labels + ids only.

    Returns (train: TrainingSet, test_x, test_y, n_id_classes, n_ood_classes).
    Never touches the .tags sidecar.
    """
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != _MAGIC:
            raise DataGenError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        n_train, n_test, dim, n_id, n_ood = struct.unpack("<IIIHH", f.read(16))
        train_ids, train_labels, train_x = _read_records(f, n_train, dim)
        _, test_y, test_x = _read_records(f, n_test, dim)
    train = TrainingSet(x=train_x, observed_labels=train_labels, ids=train_ids)
    return train, test_x, test_y, n_id, n_ood


def load_tags(path: str) -> TagTable:
    """Evaluation-only reader for the hidden tag sidecar."""
    with open(path + ".tags", "rb") as f:
        magic = f.read(5)
        if magic != _TAGS_MAGIC:
            raise DataGenError(f"bad tags magic {magic!r}")
        (n,) = struct.unpack("<I", f.read(4))
        ids = np.empty(n, dtype=np.int64)
        trues = np.empty(n, dtype=np.int64)
        kinds = np.empty(n, dtype=np.int64)
        for i in range(n):
            ids[i], trues[i], kinds[i] = struct.unpack("<QHB", f.read(11))
    return TagTable(ids=ids, true_labels=trues, noise_kinds=kinds)


def _read_records(f, n, dim):
    ids = np.empty(n, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    x = np.empty((n, dim), dtype=np.float64)
    rec_feat = dim * 4
    for i in range(n):
        ids[i], labels[i] = struct.unpack("<QH", f.read(10))
        x[i] = np.frombuffer(f.read(rec_feat), dtype="<f4")
    return ids, labels, x
