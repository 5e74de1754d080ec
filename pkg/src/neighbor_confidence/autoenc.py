"""Permutation-invariant point-cloud autoencoder trained with Chamfer loss.

Architecture (all float64)::

    per point   3 -> 32 -> 64   ReLU, ReLU      (shared weights)
    max-pool over points -> 64
    bottleneck  64 -> z_dim     identity
    decoder     z_dim -> 64 -> 128 -> 3N   ReLU, ReLU, identity

The forward pass goes through :func:`kernels.dense_rows`, which sums each
output in input order and treats rows independently. Encoding a cloud is
therefore bit-identical under any permutation of its points, and a batch
forward pass matches the single-cloud path exactly.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, ParameterError, ShapeError, TrainingDivergedError, UnsupportedVersionError
from .rng import MASK64, Xoshiro256
from .synth import chamfer_from_minima

log = logging.getLogger(__name__)

LAYER_NAMES = ("enc1", "enc2", "bottleneck", "dec1", "dec2", "dec3")
MODEL_MAGIC = b"NCAE"
MODEL_VERSION = 1


def layer_shapes(n_points: int, z_dim: int) -> list[tuple[int, int]]:
    """(rows, cols) = (fan_out, fan_in) of each layer, in file order."""
    return [(32, 3), (64, 32), (z_dim, 64), (64, z_dim), (128, 64), (3 * n_points, 128)]


@dataclass
class AutoencoderModel:
    n_points: int
    z_dim: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        shapes = layer_shapes(self.n_points, self.z_dim)
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} layers")
        for name, (rows, cols), w, b in zip(LAYER_NAMES, shapes, self.weights, self.biases):
            if w.shape != (rows, cols) or b.shape != (rows,):
                raise ShapeError(
                    f"layer {name}: expected weight {(rows, cols)} and bias {(rows,)}, "
                    f"got {w.shape} and {b.shape}"
                )

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved in layer order (W1, b1, W2, b2, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "AutoencoderModel":
        return AutoencoderModel(
            self.n_points, self.z_dim, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def equals(self, other: "AutoencoderModel") -> bool:
        """Bit-exact equality of dims and every parameter."""
        if (self.n_points, self.z_dim) != (other.n_points, other.z_dim):
            return False
        return all(a.tobytes() == b.tobytes() for a, b in zip(self.parameters(), other.parameters()))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ParameterError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("train.batch_size must be >= 1")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ParameterError("train.learning_rate must be a finite value >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ParameterError("train.seed must be a 64-bit unsigned integer")


def init_model(n_points: int, z_dim: int, seed: int) -> AutoencoderModel:
    """Glorot-uniform weights, zero biases, drawn layer by layer in row-major order."""
    if n_points < 1 or z_dim < 1:
        raise ParameterError("n_points and z_dim must be >= 1")
    rng = Xoshiro256(seed)
    weights, biases = [], []
    for rows, cols in layer_shapes(n_points, z_dim):
        bound = math.sqrt(6.0 / (rows + cols))
        u = rng.random_array(rows * cols).reshape(rows, cols)
        weights.append(bound * (2.0 * u - 1.0))
        biases.append(np.zeros(rows))
    return AutoencoderModel(n_points, z_dim, weights, biases)


def _relu(a: np.ndarray) -> np.ndarray:
    return np.where(a > 0.0, a, 0.0)


def _forward(model: AutoencoderModel, clouds: np.ndarray):
    """Batched forward pass over (B, N, 3); returns output and cached activations."""
    W, b = model.weights, model.biases
    bsz, n, _ = clouds.shape
    pts = clouds.reshape(bsz * n, 3)
    a1 = kernels.dense_rows(pts, W[0], b[0])
    h1 = _relu(a1)
    a2 = kernels.dense_rows(h1, W[1], b[1])
    h2 = _relu(a2).reshape(bsz, n, -1)
    arg = h2.argmax(axis=1)  # lowest index among maximizers
    g = np.take_along_axis(h2, arg[:, None, :], axis=1)[:, 0, :]
    z = kernels.dense_rows(g, W[2], b[2])
    a4 = kernels.dense_rows(z, W[3], b[3])
    h4 = _relu(a4)
    a5 = kernels.dense_rows(h4, W[4], b[4])
    h5 = _relu(a5)
    out = kernels.dense_rows(h5, W[5], b[5]).reshape(bsz, n, 3)
    cache = dict(pts=pts, a1=a1, h1=h1, a2=a2, arg=arg, g=g, z=z, a4=a4, h4=h4, a5=a5, h5=h5)
    return out, cache


def _check_clouds(model: AutoencoderModel, clouds) -> np.ndarray:
    arr = np.asarray(clouds, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected (N, 3) clouds, got shape {np.shape(clouds)}")
    if arr.shape[1] != model.n_points:
        raise ShapeError(f"model expects {model.n_points} points per cloud, got {arr.shape[1]}")
    if arr.shape[0] == 0:
        raise ShapeError("empty batch")
    return arr


def encode(model: AutoencoderModel, cloud) -> np.ndarray:
    """Latent vector of one cloud."""
    arr = _check_clouds(model, cloud)
    if arr.shape[0] != 1:
        raise ShapeError("encode takes a single (N, 3) cloud")
    W, b = model.weights, model.biases
    h1 = _relu(kernels.dense_rows(arr[0], W[0], b[0]))
    h2 = _relu(kernels.dense_rows(h1, W[1], b[1]))
    g = h2.max(axis=0)
    return kernels.dense_rows(g[None], W[2], b[2])[0]


def decode(model: AutoencoderModel, z) -> np.ndarray:
    zv = np.asarray(z, dtype=np.float64)
    if zv.shape != (model.z_dim,):
        raise ShapeError(f"model expects a latent of length {model.z_dim}, got shape {zv.shape}")
    W, b = model.weights, model.biases
    h4 = _relu(kernels.dense_rows(zv[None], W[3], b[3]))
    h5 = _relu(kernels.dense_rows(h4, W[4], b[4]))
    return kernels.dense_rows(h5, W[5], b[5]).reshape(model.n_points, 3)


def reconstruct(model: AutoencoderModel, cloud) -> np.ndarray:
    return decode(model, encode(model, cloud))


def reconstruction_error(model: AutoencoderModel, cloud) -> float:
    from .synth import chamfer_distance

    arr = _check_clouds(model, cloud)
    return chamfer_distance(arr[0], reconstruct(model, arr[0]))


def batch_losses(model: AutoencoderModel, clouds) -> np.ndarray:
    """Per-cloud Chamfer reconstruction loss for a batch."""
    arr = _check_clouds(model, clouds)
    out, _ = _forward(model, arr)
    min_ab, _, min_ba, _ = kernels.chamfer_nn(arr, out)
    return min_ab.sum(axis=1) / min_ab.shape[1] + min_ba.sum(axis=1) / min_ba.shape[1]


def loss_and_gradient(model: AutoencoderModel, clouds):
    """Mean Chamfer loss over the batch, per-cloud losses, and the exact gradient.

    The gradient is returned as an :class:`AutoencoderModel` holding
    d(loss)/d(parameter) in place of each parameter. Subgradients: 0 at a
    ReLU kink; the max-pool routes to the lowest-index maximizing point;
    Chamfer nearest-neighbor ties go to the lowest-index neighbor.
    """
    P = _check_clouds(model, clouds)
    W = model.weights
    bsz, n, _ = P.shape
    R, c = _forward(model, P)
    min_ab, arg_ab, min_ba, arg_ba = kernels.chamfer_nn(P, R)
    per = min_ab.sum(axis=1) / n + min_ba.sum(axis=1) / n
    loss = float(per.mean())

    bidx = np.arange(bsz)[:, None]
    dR = np.zeros_like(R)
    # input -> reconstruction direction: each input point pulls its nearest output point
    np.add.at(dR, (bidx, arg_ab), (2.0 / (n * bsz)) * (R[bidx, arg_ab] - P))
    # reconstruction -> input direction
    dR += (2.0 / (n * bsz)) * (R - P[bidx, arg_ba])

    gW, gb = [None] * 6, [None] * 6
    dout = dR.reshape(bsz, 3 * n)
    gW[5], gb[5] = dout.T @ c["h5"], dout.sum(axis=0)
    da5 = (dout @ W[5]) * (c["a5"] > 0)
    gW[4], gb[4] = da5.T @ c["h4"], da5.sum(axis=0)
    da4 = (da5 @ W[4]) * (c["a4"] > 0)
    gW[3], gb[3] = da4.T @ c["z"], da4.sum(axis=0)
    dz = da4 @ W[3]
    gW[2], gb[2] = dz.T @ c["g"], dz.sum(axis=0)
    dg = dz @ W[2]
    dh2 = np.zeros((bsz, n, dg.shape[1]))
    np.put_along_axis(dh2, c["arg"][:, None, :], dg[:, None, :], axis=1)
    da2 = dh2.reshape(bsz * n, -1) * (c["a2"] > 0)
    gW[1], gb[1] = da2.T @ c["h1"], da2.sum(axis=0)
    da1 = (da2 @ W[1]) * (c["a1"] > 0)
    gW[0], gb[0] = da1.T @ c["pts"], da1.sum(axis=0)
    grad = AutoencoderModel(model.n_points, model.z_dim, gW, gb)
    return loss, per, grad


def loss_gradient(model: AutoencoderModel, batch) -> AutoencoderModel:
    return loss_and_gradient(model, batch)[2]


def train(model: AutoencoderModel, corpus, config: TrainConfig):
    """Adam on mean Chamfer loss. Returns ``(trained_model, epoch_mean_losses)``.

    ``corpus`` is an (n, N, 3) array of (normalized) clouds. Batch order is
    reshuffled every epoch from a stream seeded by ``config.seed``; the
    reported epoch loss is the mean of the per-cloud losses seen during that
    epoch (before each batch's update), summed in cloud order.
    """
    config.validate()
    data = _check_clouds(model, corpus)
    n = data.shape[0]
    model = model.copy()
    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = Xoshiro256(config.seed)
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.epsilon
    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        seen = np.empty(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            # a diverging run overflows; detected and reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, per, grad = loss_and_gradient(model, data[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            seen[idx] = per
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, g, mi, vi in zip(params, grad.parameters(), m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * (g * g)
                with np.errstate(over="ignore", invalid="ignore"):
                    p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        epoch_loss = float(seen.sum() / n)
        if not math.isfinite(epoch_loss) or not model.is_finite():
            raise TrainingDivergedError(epoch, epoch_loss)
        history.append(epoch_loss)
        if epoch == 1 or epoch % 50 == 0 or epoch == config.epochs:
            log.info("epoch %d/%d loss %.6g", epoch, config.epochs, epoch_loss)
    return model, history


# ---------------------------------------------------------------------------
# weight file


def save_model(path, model: AutoencoderModel) -> None:
    parts = [MODEL_MAGIC, struct.pack("<III", MODEL_VERSION, model.n_points, model.z_dim)]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> AutoencoderModel:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: truncated weight file header")
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    version, n_points, z_dim = struct.unpack_from("<III", data, 4)
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported weight file version {version}")
    if n_points < 1 or z_dim < 1:
        raise FormatError(f"{path}: invalid dims n_points={n_points} z_dim={z_dim}")
    off = 16
    weights, biases = [], []
    for name, expected in zip(LAYER_NAMES, layer_shapes(n_points, z_dim)):
        if off + 8 > len(data):
            raise FormatError(f"{path}: truncated before layer {name}")
        rows, cols = struct.unpack_from("<II", data, off)
        if (rows, cols) != expected:
            raise FormatError(f"{path}: layer {name} has shape {(rows, cols)}, expected {expected}")
        off += 8
        nbytes = 8 * (rows * cols + rows)
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated inside layer {name}")
        weights.append(np.frombuffer(data, "<f8", rows * cols, off).reshape(rows, cols).astype(np.float64))
        biases.append(np.frombuffer(data, "<f8", rows, off + 8 * rows * cols).astype(np.float64))
        off += nbytes
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes after last layer")
    return AutoencoderModel(n_points, z_dim, weights, biases)
