"""The coding-rate-reduction objective on unit-norm features.

For a d-by-m feature matrix Z and an m-by-k row-stochastic membership matrix,
the objective is the global rate term

    R(Z) = 1/2 log det(I + alpha Z Z^T)

minus the per-class compression term

    R_c(Z, Pi) = sum_j gamma_j/2 log det(I + alpha_j Z Diag(Pi_j) Z^T),

with alpha = d/(m eps^2), alpha_j = d/(<1, Pi_j> eps^2) and
gamma_j = <1, Pi_j>/m. Soft memberships are supported throughout; one-hot
labels are the special case. Log-dets are evaluated on the smaller Gram side
(d-by-d versus active-sample-count), which keeps the cost at
O(min(d, m_active)^3) per term.
"""

import dataclasses

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .numerics import NumericalError, logdet_i_plus, require_finite

MEMBERSHIP_ROW_SUM_TOL = 1e-10
UNIT_COLUMN_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class CodingRateParams:
    """Batch-derived constants of the objective.

    ``alpha`` scales the global Gram, ``alpha_per_class[j]`` the class-j
    weighted Gram, and ``gamma_per_class[j]`` is class j's mass fraction
    (summing to one).
    """

    epsilon_sq: float
    alpha: float
    alpha_per_class: np.ndarray
    gamma_per_class: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.alpha_per_class.shape[0]


def check_membership(Pi: np.ndarray) -> np.ndarray:
    """Validate an m-by-k membership matrix and return it as float64."""
    Pi = np.asarray(Pi, dtype=np.float64)
    if Pi.ndim != 2 or Pi.shape[1] < 1:
        raise ValueError(f"membership matrix must be 2-D with k >= 1, got {Pi.shape}")
    require_finite(Pi, "membership matrix")
    if np.any(Pi < 0.0) or np.any(Pi > 1.0):
        raise ValueError("membership entries must lie in [0, 1]")
    rows = Pi.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > MEMBERSHIP_ROW_SUM_TOL):
        worst = int(np.argmax(np.abs(rows - 1.0)))
        raise ValueError(f"membership row {worst} sums to {rows[worst]!r}, expected 1")
    return Pi


def check_unit_columns(Z: np.ndarray, tol: float = UNIT_COLUMN_TOL) -> None:
    norms = np.linalg.norm(Z, axis=0)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(f"feature column {worst} has norm {norms[worst]!r}")


def params_from(Pi: np.ndarray, d: int, epsilon_sq: float) -> CodingRateParams:
    """Derive (alpha, alpha_j, gamma_j) from a membership matrix and feature dim."""
    if epsilon_sq <= 0.0:
        raise ValueError(f"epsilon_sq must be positive, got {epsilon_sq}")
    if d < 1:
        raise ValueError(f"feature dimension must be >= 1, got {d}")
    Pi = check_membership(Pi)
    m = Pi.shape[0]
    counts = Pi.sum(axis=0)
    empty = np.flatnonzero(counts <= 0.0)
    if empty.size:
        raise ValueError(f"class {int(empty[0])} has zero membership mass")
    return CodingRateParams(
        epsilon_sq=float(epsilon_sq),
        alpha=d / (m * epsilon_sq),
        alpha_per_class=d / (counts * epsilon_sq),
        gamma_per_class=counts / m,
    )


def _weighted_gram_min_side(Z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gram of the sqrt-weighted features on its cheaper side.

    Restricting to the active (nonzero-weight) columns keeps one-hot class
    terms at O(d^2 m_j); both sides share the nonzero spectrum, so the
    log-det is unaffected.
    """
    active = np.flatnonzero(w > 0.0)
    W = Z[:, active] * np.sqrt(w[active])
    d = W.shape[0]
    if d <= active.size:
        return W @ W.T
    return W.T @ W


def rate(Z: np.ndarray, alpha: float) -> float:
    """Global rate term: 1/2 log det(I + alpha Z Z^T)."""
    Z = np.asarray(Z, dtype=np.float64)
    require_finite(Z, "Z")
    if alpha < 0.0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    return 0.5 * logdet_i_plus(alpha, _weighted_gram_min_side(Z, np.ones(Z.shape[1])))


def rate_c(Z: np.ndarray, Pi: np.ndarray, p: CodingRateParams) -> float:
    """Compression term: the gamma_j-weighted sum of per-class rates."""
    Z = np.asarray(Z, dtype=np.float64)
    require_finite(Z, "Z")
    Pi = check_membership(Pi)
    if Pi.shape[0] != Z.shape[1]:
        raise ValueError(
            f"membership has {Pi.shape[0]} rows but Z has {Z.shape[1]} columns"
        )
    if Pi.shape[1] != p.num_classes:
        raise ValueError("params were derived for a different class count")
    total = 0.0
    for j in range(Pi.shape[1]):
        G = _weighted_gram_min_side(Z, Pi[:, j])
        total += 0.5 * p.gamma_per_class[j] * logdet_i_plus(p.alpha_per_class[j], G)
    return float(total)


def delta_r(Z: np.ndarray, Pi: np.ndarray, p: CodingRateParams) -> float:
    """Coding rate reduction: rate minus rate_c.

    For k = 1 the two terms are evaluated through the identical code path on
    bitwise-identical inputs, so the difference is exactly zero.
    """
    return rate(Z, p.alpha) - rate_c(Z, Pi, p)


def grad_delta_r_z(Z: np.ndarray, Pi: np.ndarray, p: CodingRateParams) -> np.ndarray:
    """Ascent gradient of delta_r with respect to Z.

        alpha (I + alpha Z Z^T)^{-1} Z
          - sum_j gamma_j alpha_j (I + alpha_j Z Diag(Pi_j) Z^T)^{-1} Z Diag(Pi_j)

    Each SPD system is solved through one Cholesky factorization; the k = 1
    case cancels exactly because both terms run the same solve.
    """
    Z = np.asarray(Z, dtype=np.float64)
    require_finite(Z, "Z")
    Pi = check_membership(Pi)
    if Pi.shape[0] != Z.shape[1]:
        raise ValueError(
            f"membership has {Pi.shape[0]} rows but Z has {Z.shape[1]} columns"
        )
    if Pi.shape[1] != p.num_classes:
        raise ValueError("params were derived for a different class count")
    m = Z.shape[1]
    grad = p.alpha * _solve_weighted(Z, np.ones(m), p.alpha)
    for j in range(Pi.shape[1]):
        coeff = p.gamma_per_class[j] * p.alpha_per_class[j]
        grad -= coeff * _solve_weighted(Z, Pi[:, j], p.alpha_per_class[j])
    return grad


def _solve_weighted(Z: np.ndarray, w: np.ndarray, c: float) -> np.ndarray:
    """(I + c Z Diag(w) Z^T)^{-1} Z Diag(w) via Cholesky."""
    d = Z.shape[0]
    Zw = Z * w
    X = c * (Zw @ Z.T)
    X[np.diag_indices_from(X)] += 1.0
    try:
        cf = cho_factor(X, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky solve in the rate gradient failed: {exc}") from exc
    return cho_solve(cf, Zw, check_finite=False)
