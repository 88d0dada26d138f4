"""A small MLP featurizer with hand-written forward/backward passes.

Hidden layers are rectified; the final layer is linear followed by column
normalization, so every output feature lies on the unit sphere. The backward
pass applies the normalization Jacobian (I - z z^T)/||u|| per column and the
usual chain rule through the rectifiers. Reverse-mode gradients are checked
against central finite differences in the test suite.

Checkpoints are flat binary files: magic ``MCRK``, a format version, the
layer-size list, then row-major float64 weight/bias blocks in layer order,
little-endian throughout.
"""

import dataclasses
import struct

import numpy as np

from .numerics import require_finite

CHECKPOINT_MAGIC = b"MCRK"
CHECKPOINT_VERSION = 1

# Pre-normalization columns shorter than this get a deterministic nudge along
# e_1 before normalizing; the Jacobian is singular at zero.
NORM_SAFEGUARD = 1e-12


@dataclasses.dataclass
class MlpParams:
    """Weights and biases, layer_sizes = (input, hidden..., output)."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_sizes=self.layer_sizes,
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclasses.dataclass
class ForwardCache:
    """Per-layer activations of one batch, consumed by ``backward``."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    safeguarded_output: np.ndarray
    norms: np.ndarray
    features: np.ndarray


def init(layer_sizes, seed: int) -> MlpParams:
    """Seeded initialization: weights ~ N(0, 1/fan_in), biases zero."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_sizes=sizes, weights=weights, biases=biases)


def forward(params: MlpParams, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Map a D-by-m batch to unit-norm d-by-m features."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != params.layer_sizes[0]:
        raise ValueError(
            f"expected input of shape ({params.layer_sizes[0]}, m), got {X.shape}"
        )
    if X.shape[1] < 1:
        raise ValueError("batch must contain at least one sample")
    require_finite(X, "X")
    h = X
    pre = []
    last = len(params.weights) - 1
    for li, (W, b) in enumerate(zip(params.weights, params.biases)):
        u = W @ h + b[:, None]
        pre.append(u)
        h = np.maximum(u, 0.0) if li < last else u
    norms = np.linalg.norm(h, axis=0)
    tiny = norms < NORM_SAFEGUARD
    if np.any(tiny):
        h = h.copy()
        h[0, tiny] += NORM_SAFEGUARD
        norms = np.linalg.norm(h, axis=0)
    Z = h / norms
    return Z, ForwardCache(
        inputs=X,
        pre_activations=pre,
        safeguarded_output=h,
        norms=norms,
        features=Z,
    )


def backward(
    params: MlpParams, cache: ForwardCache, dL_dZ: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients of a loss given its gradient on the features.

    Returns one (dW, db) pair per layer, in layer order.
    """
    dL_dZ = np.asarray(dL_dZ, dtype=np.float64)
    Z = cache.features
    if dL_dZ.shape != Z.shape:
        raise ValueError(f"dL_dZ has shape {dL_dZ.shape}, expected {Z.shape}")
    # normalization layer: (I - z z^T) / ||u|| per column
    du = (dL_dZ - Z * np.sum(dL_dZ * Z, axis=0)) / cache.norms
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.weights)
    for li in range(len(params.weights) - 1, -1, -1):
        h_in = cache.inputs if li == 0 else np.maximum(cache.pre_activations[li - 1], 0.0)
        grads[li] = (du @ h_in.T, du.sum(axis=1))
        if li > 0:
            du = (params.weights[li].T @ du) * (cache.pre_activations[li - 1] > 0.0)
    return grads


def sgd_step(
    params: MlpParams, grads: list[tuple[np.ndarray, np.ndarray]], nu_theta: float
) -> MlpParams:
    """One plain gradient-descent step: params - nu_theta * grads."""
    if len(grads) != len(params.weights):
        raise ValueError("gradient list does not match the layer count")
    weights, biases = [], []
    for (W, b), (dW, db) in zip(zip(params.weights, params.biases), grads):
        if dW.shape != W.shape or db.shape != b.shape:
            raise ValueError("gradient shapes do not match the parameters")
        weights.append(W - nu_theta * dW)
        biases.append(b - nu_theta * db)
    return MlpParams(layer_sizes=params.layer_sizes, weights=weights, biases=biases)


def save_checkpoint(params: MlpParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.layer_sizes)))
        fh.write(struct.pack(f"<{len(params.layer_sizes)}I", *params.layer_sizes))
        for W, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sII")
    if len(blob) < head:
        raise ValueError("checkpoint truncated: header incomplete")
    magic, version, n_sizes = struct.unpack_from("<4sII", blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"checkpoint has wrong magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = head
    try:
        sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
    except struct.error as exc:
        raise ValueError("checkpoint truncated: layer sizes incomplete") from exc
    offset += struct.calcsize(f"<{n_sizes}I")
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"checkpoint carries invalid layer sizes {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        need = (fan_out * fan_in + fan_out) * 8
        if offset + need > len(blob):
            raise ValueError("checkpoint truncated: parameter block incomplete")
        W = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=offset)
        offset += fan_out * fan_in * 8
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += fan_out * 8
        weights.append(W.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if offset != len(blob):
        raise ValueError("checkpoint has trailing bytes")
    return MlpParams(layer_sizes=tuple(sizes), weights=weights, biases=biases)
