"""Dataset loading, synthetic generation, and splits.

Loaders ingest the two public binary layouts (IDX and the CIFAR-10 binary
batches); synthetic generators provide desk-scale ID/OOD sources so every
experiment runs offline. Pixel bytes are scaled to [0, 1]; no mean/std
normalization is applied.
"""

import gzip
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, FormatError
from .seeds import stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixel bytes
CIFAR_CLASSES = 10


@dataclass
class LabeledDataset:
    """Feature matrix (n x D) with integer class labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n < 1:
            raise DomainError("dataset must contain at least one sample")
        if self.labels.shape[0] != n:
            raise DimensionError(f"{self.labels.shape[0]} labels for {n} samples")
        if self.num_classes < 1:
            raise DomainError("num_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DomainError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features contain non-finite values")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic dataset; generation is a pure function of it.

    kind:
        "blobs"       Gaussian clusters of width `noise` around class centers
                      placed at `separation` times random unit directions.
        "ring"        points on an annulus with radius uniform in
                      [separation, separation + noise]; labels all 0. Used as
                      an OOD source placed outside the blob region.
        "uniform-box" uniform samples in the centered hyperbox
                      [-separation, separation]^dim.
    """

    kind: str
    dim: int
    num_classes: int
    separation: float
    noise: float
    count: int
    seed: int

    def __post_init__(self):
        if self.kind not in ("blobs", "ring", "uniform-box"):
            raise DomainError(f"unknown synthetic kind {self.kind!r}")
        if self.dim < 1 or self.count < 1 or self.num_classes < 1:
            raise DomainError("dim, count, and num_classes must be positive")
        if self.noise < 0:
            raise DomainError("noise must be >= 0")


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Generate the dataset described by `spec` (deterministic per seed)."""
    rng = stream(spec.seed, f"synth:{spec.kind}")
    if spec.kind == "blobs":
        directions = rng.standard_normal((spec.num_classes, spec.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        centers = spec.separation * directions
        labels = np.arange(spec.count, dtype=np.int64) % spec.num_classes
        features = centers[labels] + spec.noise * rng.standard_normal((spec.count, spec.dim))
        return LabeledDataset(features, labels, spec.num_classes)
    if spec.kind == "ring":
        directions = rng.standard_normal((spec.count, spec.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = rng.uniform(spec.separation, spec.separation + spec.noise, spec.count)
        return LabeledDataset(radii[:, None] * directions, np.zeros(spec.count, dtype=np.int64), 1)
    features = rng.uniform(-spec.separation, spec.separation, (spec.count, spec.dim))
    labels = np.arange(spec.count, dtype=np.int64) % spec.num_classes
    return LabeledDataset(features, labels, spec.num_classes)


def split(ds: LabeledDataset, fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle, then prefix/suffix split at round(fraction * n).

    Both halves are non-empty (the cut is clamped to [1, n - 1]); together
    they contain exactly the rows of `ds`.
    """
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    if n < 2:
        raise DomainError("cannot split a single-sample dataset")
    perm = stream(seed, "split").permutation(n)
    cut = min(n - 1, max(1, int(np.floor(fraction * n + 0.5))))
    head, tail = perm[:cut], perm[cut:]
    return (
        LabeledDataset(ds.features[head], ds.labels[head], ds.num_classes),
        LabeledDataset(ds.features[tail], ds.labels[tail], ds.num_classes),
    )


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":  # gzip, as MNIST files usually ship
        try:
            return gzip.decompress(data)
        except OSError as exc:
            raise FormatError(f"{path}: corrupt gzip stream") from exc
    return data


def _parse_idx(path, expect_magic: int, expect_rank: int) -> np.ndarray:
    data = _read_bytes(path)
    if len(data) < 4:
        raise FormatError(f"{path}: truncated IDX header at offset 0")
    magic = int.from_bytes(data[:4], "big")
    if magic != expect_magic:
        raise FormatError(f"{path}: bad IDX magic {magic:#010x} at offset 0, expected {expect_magic:#010x}")
    header_end = 4 + 4 * expect_rank
    if len(data) < header_end:
        raise FormatError(f"{path}: truncated IDX dimensions at offset 4")
    dims = [int.from_bytes(data[4 + 4 * i:8 + 4 * i], "big") for i in range(expect_rank)]
    total = 1
    for d in dims:
        total *= d
    if len(data) != header_end + total:
        raise FormatError(
            f"{path}: payload is {len(data) - header_end} bytes at offset {header_end}, expected {total}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(image_path, label_path) -> LabeledDataset:
    """Load an IDX image/label file pair (the MNIST family layout).

    Images are scaled to [0, 1] and flattened row-major to D = H * W.
    Plain and gzip-compressed files are both accepted.
    """
    images = _parse_idx(image_path, IDX_IMAGE_MAGIC, expect_rank=3)
    labels = _parse_idx(label_path, IDX_LABEL_MAGIC, expect_rank=1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{image_path} has {images.shape[0]} images but {label_path} has {labels.shape[0]} labels"
        )
    n, h, w = images.shape
    if n == 0 or h == 0 or w == 0:
        raise FormatError(f"{image_path}: empty dimension in header {images.shape}")
    features = images.reshape(n, h * w).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), int(labels.max()) + 1)


def load_cifar10_bin(paths) -> LabeledDataset:
    """Load CIFAR-10 binary batch files (3073-byte records, channel-major)."""
    if isinstance(paths, (str, bytes)) or not hasattr(paths, "__iter__"):
        paths = [paths]
    feature_parts, label_parts = [], []
    for path in paths:
        data = _read_bytes(path)
        if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: length {len(data)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        if labels.max() >= CIFAR_CLASSES:
            bad = int(np.argmax(labels >= CIFAR_CLASSES))
            raise FormatError(
                f"{path}: label byte {labels[bad]} in record {bad} exceeds class count {CIFAR_CLASSES}"
            )
        label_parts.append(labels.astype(np.int64))
        feature_parts.append(records[:, 1:].astype(np.float64) / 255.0)
    return LabeledDataset(np.vstack(feature_parts), np.concatenate(label_parts), CIFAR_CLASSES)
