"""Datasets: a seeded union-of-subspaces generator, an IDX image loader, and
membership-matrix construction.

The generator draws one orthonormal basis per class (mutually orthogonal
across classes when they fit in the ambient dimension), samples Gaussian
coefficients, adds isotropic noise and normalizes every sample to the unit
sphere. IDX files follow the classic big-endian container layout: a 32-bit
magic, the dimension sizes, then unsigned bytes.
"""

import dataclasses
import struct

import numpy as np

from .numerics import require_finite

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclasses.dataclass
class Dataset:
    """Inputs as columns of X, integer labels in [0, k)."""

    X: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D (ambient_dim, samples)")
        require_finite(self.X, "X")
        m = self.X.shape[1]
        if self.labels.shape != (m,):
            raise ValueError(f"labels must have shape ({m},), got {self.labels.shape}")
        if self.k < 1 or m < self.k:
            raise ValueError(f"need at least one sample per class, m={m} k={self.k}")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise ValueError("labels must lie in [0, k)")
        present = np.unique(self.labels)
        if present.size != self.k:
            missing = sorted(set(range(self.k)) - set(present.tolist()))
            raise ValueError(f"classes {missing} have no samples")

    @property
    def num_samples(self) -> int:
        return self.X.shape[1]


@dataclasses.dataclass(frozen=True)
class SynthConfig:
    """Union-of-subspaces generator settings."""

    ambient_dim: int
    classes: int
    subspace_dim: int
    samples_per_class: int
    noise_sigma: float = 0.0
    seed: int = 0
    orthogonal: bool = True

    def __post_init__(self):
        if min(self.ambient_dim, self.classes, self.subspace_dim,
               self.samples_per_class) < 1:
            raise ValueError("all dimensions and counts must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.subspace_dim > self.ambient_dim:
            raise ValueError("subspace_dim cannot exceed ambient_dim")
        if self.orthogonal and self.classes * self.subspace_dim > self.ambient_dim:
            raise ValueError(
                "orthogonal mode needs classes * subspace_dim <= ambient_dim"
            )


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    # sign-fix so the factorization (and thus the dataset) is seed-deterministic
    return Q * np.sign(np.diag(R))


def synth_subspaces(cfg: SynthConfig) -> tuple[Dataset, list[np.ndarray]]:
    """Generate unit-norm samples on noisy per-class linear subspaces.

    Returns the dataset (samples grouped by class, in class order) and the
    ground-truth per-class bases. In orthogonal mode the bases partition one
    orthonormal frame, so distinct classes are exactly orthogonal.
    """
    rng = np.random.default_rng(cfg.seed)
    D, k, r, n = cfg.ambient_dim, cfg.classes, cfg.subspace_dim, cfg.samples_per_class
    if cfg.orthogonal:
        frame = _orthonormal_columns(rng, D, k * r)
        bases = [frame[:, j * r : (j + 1) * r].copy() for j in range(k)]
    else:
        bases = [_orthonormal_columns(rng, D, r) for _ in range(k)]
    X = np.empty((D, k * n))
    for j in range(k):
        coeffs = rng.standard_normal((r, n))
        block = bases[j] @ coeffs
        if cfg.noise_sigma > 0.0:
            block = block + cfg.noise_sigma * rng.standard_normal((D, n))
        X[:, j * n : (j + 1) * n] = block
    X /= np.linalg.norm(X, axis=0)
    labels = np.repeat(np.arange(k, dtype=np.int64), n)
    return Dataset(X=X, labels=labels, k=k), bases


def one_hot_membership(labels: np.ndarray, k: int) -> np.ndarray:
    """Binary m-by-k membership matrix: row i is the indicator of labels[i]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be 1-D")
    if k < 1:
        raise ValueError("k must be >= 1")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {int(bad)} is outside [0, {k})")
    Pi = np.zeros((labels.size, k))
    Pi[np.arange(labels.size), labels] = 1.0
    return Pi


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset.

    Pixels are scaled to [0, 1] and each image is flattened (byte order
    preserved) into one column of X.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, ndim=3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, ndim=1)
    n, rows, cols = images.shape
    if labels.shape[0] != n:
        raise ValueError(
            f"count mismatch: {n} images but {labels.shape[0]} labels"
        )
    X = images.reshape(n, rows * cols).T.astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(X=X, labels=y, k=int(y.max()) + 1)


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + 4 * ndim
    if len(blob) < 4:
        raise ValueError(f"{path}: truncated payload, no magic")
    (magic,) = struct.unpack_from(">I", blob, 0)
    if magic != expected_magic:
        raise ValueError(
            f"{path}: wrong magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    if len(blob) < header:
        raise ValueError(f"{path}: truncated payload, header incomplete")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    count = int(np.prod(dims))
    if len(blob) != header + count:
        raise ValueError(
            f"{path}: truncated payload, expected {header + count} bytes, "
            f"got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype=np.uint8, offset=header)
    return data.reshape(dims)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a Dataset whose entries are exact multiples of 1/255 to IDX files.

    Intended for fixtures and round-trip tests; the inverse of ``load_idx``.
    """
    X = dataset.X
    scaled = X * 255.0
    pixels = np.rint(scaled)
    if np.any(np.abs(scaled - pixels) > 1e-9) or scaled.min() < 0 or scaled.max() > 255:
        raise ValueError("dataset values are not exact 8-bit pixel intensities")
    m = dataset.num_samples
    side = int(np.sqrt(X.shape[0]))
    if side * side == X.shape[0]:
        rows, cols = side, side
    else:
        rows, cols = X.shape[0], 1
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, m, rows, cols))
        fh.write(pixels.astype(np.uint8).T.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, m))
        fh.write(dataset.labels.astype(np.uint8).tobytes())
