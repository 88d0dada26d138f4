"""Training loops: variational ascent, direct coding-rate ascent, and a
cross-entropy baseline.

All three share the same minibatch plumbing. Every batch recomputes the
objective constants from its own membership slice, classes with no mass in a
batch are skipped for that step, and the reported per-epoch ``delta_r`` is
always the true coding-rate reduction on the full training set, never the
variational surrogate. ``wall_ms`` covers the epoch's training work (latching
included) and excludes the end-of-epoch metric evaluation.

All randomness flows from the config seed through named substreams, so a
(config, seed) pair reproduces metrics bitwise on one platform.
"""

import dataclasses
import time

import numpy as np

from . import coding_rate, featurizer, variational
from .data import Dataset, one_hot_membership

OBJECTIVES = ("vmcr2", "mcr2", "ce")

# default featurizer step size; cross-entropy trains with the larger one
NU_THETA_RATE = 1e-3
NU_THETA_CE = 1e-2

_STREAMS = ("data", "init", "shuffle", "project", "head", "subset")


def substream(seed: int, name: str) -> np.random.Generator:
    """Named child generator of the run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS.index(name)]))


@dataclasses.dataclass(frozen=True)
class TrainerConfig:
    objective: str
    epochs: int
    batch_size: int
    feature_dim: int
    hidden_sizes: tuple[int, ...]
    variational: variational.VariationalConfig
    nu_theta: float | None = None
    epsilon_sq: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.feature_dim < 1:
            raise ValueError("batch_size and feature_dim must be positive")
        if self.nu_theta is not None and self.nu_theta <= 0:
            raise ValueError("nu_theta must be positive")

    def resolved_nu_theta(self) -> float:
        if self.nu_theta is not None:
            return self.nu_theta
        return NU_THETA_CE if self.objective == "ce" else NU_THETA_RATE


@dataclasses.dataclass
class EpochMetrics:
    epoch: int
    delta_r: float
    rate: float
    rate_c: float
    wall_ms: float
    latched: bool = False
    var_objective: float | None = None
    m_penalty: float | None = None
    ce_loss: float | None = None


@dataclasses.dataclass
class CeModel:
    """Featurizer plus the linear softmax head."""

    featurizer: featurizer.MlpParams
    head_weight: np.ndarray
    head_bias: np.ndarray


def _check_inputs(data: Dataset, Pi: np.ndarray, config: TrainerConfig):
    Pi = coding_rate.check_membership(Pi)
    if Pi.shape[0] != data.num_samples:
        raise ValueError("membership rows must match the sample count")
    if config.batch_size > data.num_samples:
        raise ValueError("batch_size exceeds the number of samples")
    return Pi


def _init_params(data: Dataset, config: TrainerConfig) -> featurizer.MlpParams:
    sizes = (data.X.shape[0], *config.hidden_sizes, config.feature_dim)
    return featurizer.init(sizes, np.random.SeedSequence([config.seed, _STREAMS.index("init")]))


def _batches(m: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(m)
    for lo in range(0, m, batch_size):
        yield order[lo : lo + batch_size]


def _rate_metrics(Z, Pi, d, epsilon_sq):
    p = coding_rate.params_from(Pi, d, epsilon_sq)
    r = coding_rate.rate(Z, p.alpha)
    rc = coding_rate.rate_c(Z, Pi, p)
    return p, r, rc


def train_vmcr2(
    data: Dataset, Pi: np.ndarray, config: TrainerConfig
) -> tuple[featurizer.MlpParams, variational.VariationalState, list[EpochMetrics]]:
    """Alternating maximization: proximal ascent on (dictionary, codes), then a
    featurizer descent step on the recomputed coupling penalty; spectral
    latching at the configured epoch cadence (epoch 0 included)."""
    Pi = _check_inputs(data, Pi, config)
    vc = config.variational
    params = _init_params(data, config)
    shuffle_rng = substream(config.seed, "shuffle")
    project_rng = substream(config.seed, "project")
    d = config.feature_dim
    X, m = data.X, data.num_samples
    mu, floor = vc.mu, vc.lipschitz_floor

    def do_latch(first_batch=None):
        if vc.latch_on_full or first_batch is None:
            Z_full, _ = featurizer.forward(params, X)
            return variational.latch(Z_full, Pi, vc.q)
        Zb, _ = featurizer.forward(params, X[:, first_batch])
        return variational.latch(Zb, Pi[first_batch], vc.q)

    state = do_latch()
    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        batches = list(_batches(m, config.batch_size, shuffle_rng))
        latched = epoch % vc.latch_freq == 0
        if latched and epoch > 0:
            state = do_latch(first_batch=batches[0])
        for idx in batches:
            Pib = Pi[idx]
            present = np.flatnonzero(Pib.sum(axis=0) > 0.0)
            Pib = Pib[:, present]
            Zb, cache = featurizer.forward(params, X[:, idx])
            pb = coding_rate.params_from(Pib, d, config.epsilon_sq)
            sub = variational.VariationalState(
                dictionary=state.dictionary, codes=state.codes[:, present]
            )
            ev = variational.step_eval(
                Zb, Pib, sub, pb, mu, lipschitz_floor=floor, include_z_grad=False
            )
            new_dict = state.dictionary + (vc.nu_gamma / ev.step_sizes.L_gamma) * ev.grad_dictionary
            new_codes = state.codes.copy()
            new_codes[:, present] += (vc.nu_a / ev.step_sizes.L_a) * ev.grad_codes
            state = variational.project(
                variational.VariationalState(new_dict, new_codes), rng=project_rng
            )
            # recompute the penalty gradient at the updated (dictionary, codes)
            sub = variational.VariationalState(
                dictionary=state.dictionary, codes=state.codes[:, present]
            )
            gz = variational.grad_z_penalty(Zb, Pib, sub, pb, mu)
            grads = featurizer.backward(params, cache, gz)
            params = featurizer.sgd_step(params, grads, config.resolved_nu_theta())
        wall_ms = (time.perf_counter() - t0) * 1e3
        Z_full, _ = featurizer.forward(params, X)
        p, r, rc = _rate_metrics(Z_full, Pi, d, config.epsilon_sq)
        pen = variational.m_penalty(Z_full, Pi, state, p)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                delta_r=r - rc,
                rate=r,
                rate_c=rc,
                wall_ms=wall_ms,
                latched=latched,
                var_objective=variational.r_v(state, p.alpha)
                - variational.r_v_c(state.codes, p)
                - (mu / (2.0 * m)) * pen,
                m_penalty=pen,
            )
        )
    return params, state, metrics


def train_mcr2(
    data: Dataset, Pi: np.ndarray, config: TrainerConfig
) -> tuple[featurizer.MlpParams, list[EpochMetrics]]:
    """Stochastic gradient ascent directly on the coding-rate reduction."""
    Pi = _check_inputs(data, Pi, config)
    params = _init_params(data, config)
    shuffle_rng = substream(config.seed, "shuffle")
    d = config.feature_dim
    X, m = data.X, data.num_samples
    nu = config.resolved_nu_theta()

    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        for idx in _batches(m, config.batch_size, shuffle_rng):
            Pib = Pi[idx]
            Pib = Pib[:, Pib.sum(axis=0) > 0.0]
            Zb, cache = featurizer.forward(params, X[:, idx])
            pb = coding_rate.params_from(Pib, d, config.epsilon_sq)
            ascent = coding_rate.grad_delta_r_z(Zb, Pib, pb)
            grads = featurizer.backward(params, cache, -ascent)
            params = featurizer.sgd_step(params, grads, nu)
        wall_ms = (time.perf_counter() - t0) * 1e3
        Z_full, _ = featurizer.forward(params, X)
        _, r, rc = _rate_metrics(Z_full, Pi, d, config.epsilon_sq)
        metrics.append(
            EpochMetrics(
                epoch=epoch, delta_r=r - rc, rate=r, rate_c=rc,
                wall_ms=wall_ms,
            )
        )
    return params, metrics


def ce_loss_and_grads(
    head_weight: np.ndarray,
    head_bias: np.ndarray,
    Z: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy of a linear head, with gradients.

    Returns (loss, d_head_weight, d_head_bias, d_features).
    """
    k = head_weight.shape[0]
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    mb = Z.shape[1]
    logits = head_weight @ Z + head_bias[:, None]
    shifted = logits - logits.max(axis=0)
    log_norm = np.log(np.sum(np.exp(shifted), axis=0))
    loss = float(np.mean(log_norm - shifted[labels, np.arange(mb)]))
    soft = np.exp(shifted - log_norm)
    soft[labels, np.arange(mb)] -= 1.0
    dlogits = soft / mb
    return loss, dlogits @ Z.T, dlogits.sum(axis=1), head_weight.T @ dlogits


def train_ce(
    data: Dataset, labels: np.ndarray, config: TrainerConfig
) -> tuple[CeModel, list[EpochMetrics]]:
    """Cross-entropy baseline: softmax head over the featurizer output."""
    labels = np.asarray(labels, dtype=np.int64)
    Pi = one_hot_membership(labels, data.k)
    Pi = _check_inputs(data, Pi, config)
    params = _init_params(data, config)
    shuffle_rng = substream(config.seed, "shuffle")
    head_rng = substream(config.seed, "head")
    d, k = config.feature_dim, data.k
    head_w = head_rng.standard_normal((k, d)) / np.sqrt(d)
    head_b = np.zeros(k)
    X, m = data.X, data.num_samples
    nu = config.resolved_nu_theta()

    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        for idx in _batches(m, config.batch_size, shuffle_rng):
            Zb, cache = featurizer.forward(params, X[:, idx])
            _, dW, db, dZ = ce_loss_and_grads(head_w, head_b, Zb, labels[idx])
            grads = featurizer.backward(params, cache, dZ)
            params = featurizer.sgd_step(params, grads, nu)
            head_w = head_w - nu * dW
            head_b = head_b - nu * db
        wall_ms = (time.perf_counter() - t0) * 1e3
        Z_full, _ = featurizer.forward(params, X)
        loss, _, _, _ = ce_loss_and_grads(head_w, head_b, Z_full, labels)
        _, r, rc = _rate_metrics(Z_full, Pi, d, config.epsilon_sq)
        metrics.append(
            EpochMetrics(
                epoch=epoch, delta_r=r - rc, rate=r, rate_c=rc,
                wall_ms=wall_ms, ce_loss=loss,
            )
        )
    return CeModel(featurizer=params, head_weight=head_w, head_bias=head_b), metrics
