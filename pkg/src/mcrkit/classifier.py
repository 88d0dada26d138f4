"""Nearest-subspace classification over learned features.

Each class is summarized by the top floor(d/k) principal directions of its
weighted feature covariance (no mean-centering: the model is a linear
subspace, not an affine one). A test feature goes to the class whose subspace
leaves the smallest projection residual; for unit-norm z the squared residual
is 1 - ||V_j^T z||^2, so no d-by-d projector is ever materialized.
"""

import dataclasses

import numpy as np

from .coding_rate import check_membership
from .numerics import require_finite, top_svd_of_weighted_gram


@dataclasses.dataclass(frozen=True)
class SubspaceModel:
    """Per-class orthonormal bases, each d-by-s with s = floor(d/k)."""

    bases: tuple[np.ndarray, ...]

    @property
    def num_classes(self) -> int:
        return len(self.bases)


def fit(Z_train: np.ndarray, Pi: np.ndarray, k: int) -> SubspaceModel:
    """Fit the per-class principal subspaces from weighted feature Grams."""
    Z_train = np.asarray(Z_train, dtype=np.float64)
    require_finite(Z_train, "Z_train")
    Pi = check_membership(Pi)
    d = Z_train.shape[0]
    if Pi.shape[1] != k:
        raise ValueError(f"membership has {Pi.shape[1]} columns, expected k={k}")
    s = d // k
    if s < 1:
        raise ValueError(f"feature dimension d={d} is below the class count k={k}")
    bases = tuple(
        top_svd_of_weighted_gram(Z_train, Pi[:, j], s)[0] for j in range(k)
    )
    return SubspaceModel(bases=bases)


def residuals(model: SubspaceModel, z: np.ndarray) -> np.ndarray:
    """Squared projection residuals ||z||^2 - ||V_j^T z||^2 per class."""
    z = np.asarray(z, dtype=np.float64)
    proj = np.array([float(np.sum((V.T @ z) ** 2)) for V in model.bases])
    return float(z @ z) - proj


def predict(model: SubspaceModel, z: np.ndarray) -> int:
    """Class with the smallest residual; ties go to the lowest index."""
    return int(np.argmin(residuals(model, z)))


def evaluate(model: SubspaceModel, Z_test: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of columns of Z_test assigned their true label."""
    Z_test = np.asarray(Z_test, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (Z_test.shape[1],):
        raise ValueError("labels must have one entry per test column")
    # one pass per class over the whole batch; argmin keeps the low-index tie rule
    proj = np.stack([np.sum((V.T @ Z_test) ** 2, axis=0) for V in model.bases])
    resid = np.sum(Z_test * Z_test, axis=0) - proj
    pred = np.argmin(resid, axis=0)
    return float(np.mean(pred == labels))
