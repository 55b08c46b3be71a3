"""MLP encoder, its EMA (momentum) copy, Adam and the step learning-rate schedule.

The encoder maps raw inputs to unit-norm embeddings: hidden layers use ReLU,
the last layer is linear and its output is L2-normalized inside
:func:`forward`. :func:`backward` includes the normalization Jacobian, so
losses only ever see features on the unit sphere.

Checkpoint layout (little-endian)::

    b"CMLM"              magic
    u8                   version (1)
    u32                  number of layer dims L
    u32[L]               layer dims, input first
    f64[...]             per layer: weight (d_in x d_out, row-major), bias (d_out)
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    FormatError,
    ShapeMismatchError,
    TapeMismatchError,
    ZeroVectorError,
)
from .numeric import EPS_NORM

CHECKPOINT_MAGIC = b"CMLM"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class MlpModel:
    """Fully connected ReLU network with unit-norm output."""

    layer_dims: list
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2:
            raise DimensionMismatchError("need at least input and output dims")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionMismatchError("one weight and bias per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise DimensionMismatchError(f"layer {i} has incompatible parameter shapes")

    @classmethod
    def init(cls, layer_dims, rng):
        """He-uniform weights drawn from ``rng``, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases)

    @property
    def embedding_dim(self):
        return self.layer_dims[-1]

    def params(self):
        """Parameter arrays in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.activation)


@dataclass(eq=False)
class MomentumModel(MlpModel):
    """EMA shadow of an :class:`MlpModel`; starts as an exact copy."""

    momentum: float = 0.999

    @classmethod
    def from_model(cls, model, momentum=0.999):
        return cls(list(model.layer_dims), [w.copy() for w in model.weights],
                   [b.copy() for b in model.biases], model.activation, momentum)


@dataclass
class Tape:
    model_id: int
    layer_dims: tuple
    inputs: list  # input to each layer
    pre_acts: list  # pre-activation of each layer
    raw: np.ndarray  # final layer output before normalization
    norms: np.ndarray
    embedding: np.ndarray
    squeeze: bool


def forward(model, x):
    """Embed ``x`` (shape ``(d_in,)`` or ``(n, d_in)``).

    Returns ``(embedding, tape)``; the tape is what :func:`backward` needs.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != model.layer_dims[0]:
        raise DimensionMismatchError(
            f"input dim {h.shape[-1]} does not match model input dim {model.layer_dims[0]}")
    inputs, pre_acts = [], []
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        pre_acts.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        raise ZeroVectorError("encoder output has zero norm")
    emb = h / norms
    tape = Tape(id(model), tuple(model.layer_dims), inputs, pre_acts, h, norms, emb, squeeze)
    return (emb[0] if squeeze else emb), tape


def backward(model, tape, grad_embedding):
    """Parameter gradients (same order as ``model.params()``) given dL/d embedding.

    Gradients are summed over the rows of the batch; losses already carry
    their own 1/B factor.
    """
    if tape.model_id != id(model) or tape.layer_dims != tuple(model.layer_dims):
        raise TapeMismatchError("tape was recorded on a different model")
    g = np.asarray(grad_embedding, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != tape.embedding.shape:
        raise TapeMismatchError(f"gradient shape {g.shape} != embedding shape {tape.embedding.shape}")
    e = tape.embedding
    # d(z/|z|)/dz = (I - e e^T) / |z|
    g = (g - e * np.sum(e * g, axis=1, keepdims=True)) / tape.norms
    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            g = g * (tape.pre_acts[i] > 0.0)
        grads[2 * i] = tape.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ model.weights[i].T
    return grads


def ema_update(momentum_model, model, m_e=None):
    """In place: theta_m <- m_e * theta_m + (1 - m_e) * theta_f."""
    if m_e is None:
        m_e = momentum_model.momentum
    if not 0.0 <= m_e <= 1.0:
        raise ValueError("m_e must lie in [0, 1]")
    if list(momentum_model.layer_dims) != list(model.layer_dims):
        raise ShapeMismatchError("momentum model and model have different shapes")
    for pm, pf in zip(momentum_model.params(), model.params()):
        pm *= m_e
        pm += (1.0 - m_e) * pf
    return momentum_model


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads, lr=None):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeMismatchError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatchError("optimizer state does not match params")
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatchError(f"grad shape {g.shape} != param shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def lr_schedule(epoch, base_lr, milestones=(20, 40, 60), gamma=0.1):
    """Piecewise-constant decay: multiply by ``gamma`` at each milestone reached."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = sum(1 for ms in milestones if epoch >= ms)
    return base_lr * gamma ** passed


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<BI", CHECKPOINT_VERSION, len(model.layer_dims)))
        fh.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    if len(data) < 9:
        raise FormatError("truncated checkpoint header")
    version, n = struct.unpack_from("<BI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 9
    if len(data) < off + 4 * n:
        raise FormatError("truncated checkpoint header")
    dims = list(struct.unpack_from(f"<{n}I", data, off))
    off += 4 * n
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(data) != off + 8 * expected:
        raise FormatError("checkpoint size does not match layer dims")
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    weights, biases, pos = [], [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b).copy())
        pos += a * b
        biases.append(flat[pos:pos + b].copy())
        pos += b
    return MlpModel(dims, weights, biases)
