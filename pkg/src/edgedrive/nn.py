"""From-scratch micro neural networks on numpy.

Dense feature layers (affine + elementwise activation), a single-gate
sigmoid recurrent cell, exact reverse-mode gradients with a finite
difference checker, post-training int8 weight quantization, and global
magnitude pruning.  Forward routines accept a single vector or a batch
(rows are samples).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, ShapeError, UsageError


class Activation(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    LINEAR = "linear"


def _apply_activation(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activation_grad(kind: Activation, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (z > 0.0).astype(z.dtype)
    if kind is Activation.SIGMOID:
        return out * (1.0 - out)
    return np.ones_like(z)


@dataclass
class DenseLayer:
    """Affine map plus elementwise activation.  weights is (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU
    mask: Optional[np.ndarray] = None  # True = weight kept; None = unpruned

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("dense layer needs 2-D weights and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match "
                f"output dim {self.weights.shape[0]}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DomainError("dense layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    """Stack of dense layers; adjacent dimensions must chain."""

    layers: List[DenseLayer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer output dim {prev.out_dim} does not feed "
                    f"next input dim {nxt.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)


@dataclass
class RecurrentCell:
    """Single-gate sigmoid recurrence: h = sigmoid(W_h h_prev + W_x x + b_h)."""

    w_hidden: np.ndarray
    w_input: np.ndarray
    b_hidden: np.ndarray

    def __post_init__(self):
        self.w_hidden = np.asarray(self.w_hidden, dtype=float)
        self.w_input = np.asarray(self.w_input, dtype=float)
        self.b_hidden = np.asarray(self.b_hidden, dtype=float)
        h = self.w_hidden.shape
        if len(h) != 2 or h[0] != h[1]:
            raise ShapeError("w_hidden must be square")
        if self.w_input.ndim != 2 or self.w_input.shape[0] != h[0]:
            raise ShapeError("w_input rows must match hidden_dim")
        if self.b_hidden.shape != (h[0],):
            raise ShapeError("b_hidden length must match hidden_dim")
        for arr in (self.w_hidden, self.w_input, self.b_hidden):
            if not np.isfinite(arr).all():
                raise DomainError("recurrent cell parameters must be finite")

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_input.shape[1]

    def copy(self) -> "RecurrentCell":
        return copy.deepcopy(self)


@dataclass
class Gradients:
    """Per-layer (dW, db) tensors mirroring an Mlp."""

    weight_grads: List[np.ndarray]
    bias_grads: List[np.ndarray]


@dataclass
class CellGradients:
    """Parameter gradients mirroring a RecurrentCell."""

    w_hidden: np.ndarray
    w_input: np.ndarray
    b_hidden: np.ndarray


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """activation(W x + b) for a vector x, or row-wise for a batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(
            f"input dim {x.shape[-1]} does not match layer input dim {layer.in_dim}"
        )
    z = x @ layer.weights.T + layer.bias
    return _apply_activation(layer.activation, z)


def mlp_forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    for layer in model.layers:
        x = dense_forward(layer, x)
    return x


def mlp_forward_cached(model: Mlp, x: np.ndarray) -> Tuple[np.ndarray, list]:
    """Forward pass keeping (input, pre-activation, output) per layer for backward."""
    x = np.asarray(x, dtype=float)
    cache = []
    for layer in model.layers:
        if x.shape[-1] != layer.in_dim:
            raise ShapeError(
                f"input dim {x.shape[-1]} does not match layer input dim {layer.in_dim}"
            )
        z = x @ layer.weights.T + layer.bias
        out = _apply_activation(layer.activation, z)
        cache.append((x, z, out))
        x = out
    return x, cache


def mlp_backward(model: Mlp, loss_grad: np.ndarray, cache: list) -> Gradients:
    """Exact reverse-mode gradients given dL/dy and the matching forward cache."""
    if len(cache) != len(model.layers):
        raise UsageError("cache does not match the model (stale or truncated)")
    grad = np.asarray(loss_grad, dtype=float)
    weight_grads: List[np.ndarray] = [None] * len(model.layers)
    bias_grads: List[np.ndarray] = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        x_in, z, out = cache[i]
        if x_in.shape[-1] != layer.in_dim or z.shape[-1] != layer.out_dim:
            raise UsageError("cache does not match the model (stale or truncated)")
        if grad.shape != z.shape:
            raise UsageError("loss gradient shape does not match the cached forward")
        dz = grad * _activation_grad(layer.activation, z, out)
        if dz.ndim == 1:
            weight_grads[i] = np.outer(dz, x_in)
            bias_grads[i] = dz.copy()
        else:
            weight_grads[i] = dz.T @ x_in
            bias_grads[i] = dz.sum(axis=0)
        grad = dz @ layer.weights
    return Gradients(weight_grads=weight_grads, bias_grads=bias_grads)


def rnn_step(cell: RecurrentCell, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One recurrence step; outputs lie strictly in (0, 1) componentwise."""
    h_prev = np.asarray(h_prev, dtype=float)
    x = np.asarray(x, dtype=float)
    if h_prev.shape[-1] != cell.hidden_dim:
        raise ShapeError(
            f"hidden state dim {h_prev.shape[-1]} does not match cell {cell.hidden_dim}"
        )
    if x.shape[-1] != cell.input_dim:
        raise ShapeError(
            f"input dim {x.shape[-1]} does not match cell input {cell.input_dim}"
        )
    a = h_prev @ cell.w_hidden.T + x @ cell.w_input.T + cell.b_hidden
    return 1.0 / (1.0 + np.exp(-a))


def rnn_forward(
    cell: RecurrentCell, h0: np.ndarray, xs: Sequence[np.ndarray]
) -> Tuple[np.ndarray, list]:
    """Unroll the cell over xs; returns final hidden state and the BPTT cache."""
    h = np.asarray(h0, dtype=float)
    cache = []
    for x in xs:
        h_next = rnn_step(cell, h, np.asarray(x, dtype=float))
        cache.append((h, np.asarray(x, dtype=float), h_next))
        h = h_next
    return h, cache


def rnn_backward(
    cell: RecurrentCell, loss_grad: np.ndarray, cache: list
) -> CellGradients:
    """Backpropagation through time for a loss on the final hidden state."""
    if not cache:
        raise UsageError("empty cache: run rnn_forward first")
    d_wh = np.zeros_like(cell.w_hidden)
    d_wx = np.zeros_like(cell.w_input)
    d_bh = np.zeros_like(cell.b_hidden)
    dh = np.asarray(loss_grad, dtype=float)
    if dh.shape != (cell.hidden_dim,):
        raise UsageError("loss gradient shape does not match the cell hidden dim")
    for h_prev, x, h_out in reversed(cache):
        da = dh * h_out * (1.0 - h_out)  # sigmoid'(a) = h (1 - h)
        d_wh += np.outer(da, h_prev)
        d_wx += np.outer(da, x)
        d_bh += da
        dh = da @ cell.w_hidden
    return CellGradients(w_hidden=d_wh, w_input=d_wx, b_hidden=d_bh)


# ---------------------------------------------------------------------------
# training utilities
# ---------------------------------------------------------------------------

def init_mlp(
    dims: Sequence[int],
    activations: Sequence[Activation],
    rng: np.random.Generator,
) -> Mlp:
    """Glorot-uniform initialised stack: dims = (in, h1, ..., out)."""
    if len(activations) != len(dims) - 1:
        raise ShapeError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        fan_in, fan_out = dims[i], dims[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weights=w, bias=np.zeros(fan_out), activation=act))
    return Mlp(layers=layers)


def init_cell(
    input_dim: int, hidden_dim: int, rng: np.random.Generator
) -> RecurrentCell:
    """Glorot-uniform initialised recurrent cell with zero bias."""
    if input_dim < 1 or hidden_dim < 1:
        raise ShapeError("cell dimensions must be >= 1")
    lim_h = np.sqrt(6.0 / (hidden_dim + hidden_dim))
    lim_x = np.sqrt(6.0 / (input_dim + hidden_dim))
    return RecurrentCell(
        w_hidden=rng.uniform(-lim_h, lim_h, size=(hidden_dim, hidden_dim)),
        w_input=rng.uniform(-lim_x, lim_x, size=(hidden_dim, input_dim)),
        b_hidden=np.zeros(hidden_dim),
    )


def sgd_step(model: Mlp, grads: Gradients, lr: float) -> None:
    """Plain SGD update in place; pruned weights stay pinned at zero."""
    for layer, dw, db in zip(model.layers, grads.weight_grads, grads.bias_grads):
        layer.weights -= lr * dw
        layer.bias -= lr * db
        if layer.mask is not None:
            layer.weights *= layer.mask


def squared_error_loss(y: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Sum of squared errors and its gradient w.r.t. y."""
    diff = np.asarray(y, dtype=float) - np.asarray(target, dtype=float)
    return float(np.sum(diff * diff)), 2.0 * diff


def gradient_check(
    model: Mlp, x: np.ndarray, target: np.ndarray, eps: float = 1e-5
) -> float:
    """Max relative error between backprop and central finite differences.

    Loss is the summed squared error of the model output against target.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    y, cache = mlp_forward_cached(model, x)
    _, dy = squared_error_loss(y, target)
    grads = mlp_backward(model, dy, cache)

    def loss_at() -> float:
        out = mlp_forward(model, x)
        return float(np.sum((out - target) ** 2))

    worst = 0.0
    for li, layer in enumerate(model.layers):
        for name, arr, g in (
            ("weights", layer.weights, grads.weight_grads[li]),
            ("bias", layer.bias, grads.bias_grads[li]),
        ):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                up = loss_at()
                flat[j] = orig - eps
                down = loss_at()
                flat[j] = orig
                numeric = (up - down) / (2.0 * eps)
                denom = max(abs(gflat[j]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[j] - numeric) / denom)
    return worst


def gradient_check_cell(
    cell: RecurrentCell,
    h0: np.ndarray,
    xs: Sequence[np.ndarray],
    target: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Finite-difference check of BPTT gradients (loss on the final hidden state)."""
    h0 = np.asarray(h0, dtype=float)
    target = np.asarray(target, dtype=float)
    h_final, cache = rnn_forward(cell, h0, xs)
    _, dh = squared_error_loss(h_final, target)
    grads = rnn_backward(cell, dh, cache)

    def loss_at() -> float:
        h, _ = rnn_forward(cell, h0, xs)
        return float(np.sum((h - target) ** 2))

    worst = 0.0
    for arr, g in (
        (cell.w_hidden, grads.w_hidden),
        (cell.w_input, grads.w_input),
        (cell.b_hidden, grads.b_hidden),
    ):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_at()
            flat[j] = orig - eps
            down = loss_at()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(gflat[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[j] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# quantization and pruning
# ---------------------------------------------------------------------------

@dataclass
class QuantizedLayer:
    """Symmetric per-tensor int8 weights; bias stays full precision."""

    w_q: np.ndarray
    scale: float
    bias: np.ndarray
    activation: Activation
    zero_point: int = 0

    def dequantized_weights(self) -> np.ndarray:
        return self.w_q.astype(float) * self.scale


def quantize_int8(layer: DenseLayer) -> QuantizedLayer:
    """Post-training symmetric quantization: scale = max|W| / 127, zero point 0."""
    w = layer.weights
    max_abs = float(np.max(np.abs(w))) if w.size else 0.0
    scale = max_abs / 127.0 if max_abs > 0.0 else 1.0
    w_q = np.clip(np.round(w / scale), -127, 127).astype(np.int8)
    return QuantizedLayer(
        w_q=w_q, scale=scale, bias=layer.bias.copy(), activation=layer.activation
    )


def quantized_forward(layer: QuantizedLayer, x: np.ndarray) -> np.ndarray:
    """Inference with dequantize-on-the-fly weights."""
    w = layer.dequantized_weights()
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(
            f"input dim {x.shape[-1]} does not match layer input dim {w.shape[1]}"
        )
    z = x @ w.T + layer.bias
    return _apply_activation(layer.activation, z)


def quantize_mlp(model: Mlp) -> List[QuantizedLayer]:
    return [quantize_int8(layer) for layer in model.layers]


def quantized_mlp_forward(layers: Sequence[QuantizedLayer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = quantized_forward(layer, x)
    return x


def prune_by_magnitude(model: Mlp, fraction: float) -> Tuple[Mlp, float]:
    """Zero the globally smallest-magnitude fraction of weights.

    Returns a pruned copy (masks installed so training keeps zeros pinned)
    and the achieved multiply-accumulate reduction = zeroed / total.
    """
    if not 0.0 <= fraction < 1.0:
        raise DomainError(f"prune fraction must lie in [0, 1), got {fraction}")
    pruned = model.copy()
    if fraction == 0.0:
        return pruned, 0.0
    magnitudes = np.concatenate([l.weights.reshape(-1) for l in pruned.layers])
    total = magnitudes.size
    k = int(np.floor(fraction * total))
    if k == 0:
        return pruned, 0.0
    order = np.argsort(np.abs(magnitudes), kind="stable")
    keep_flat = np.ones(total, dtype=bool)
    keep_flat[order[:k]] = False
    offset = 0
    for layer in pruned.layers:
        n = layer.weights.size
        keep = keep_flat[offset : offset + n].reshape(layer.weights.shape)
        layer.weights = layer.weights * keep
        layer.mask = keep if layer.mask is None else (layer.mask & keep)
        offset += n
    return pruned, k / total


# ---------------------------------------------------------------------------
# save / load (flat, versioned, textual)
# ---------------------------------------------------------------------------

MODEL_FORMAT = "edgedrive-mlp"
MODEL_VERSION = 1


def mlp_to_dict(model: Mlp) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layers": [
            {
                "activation": layer.activation.value,
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "mask": None if layer.mask is None else layer.mask.astype(int).tolist(),
            }
            for layer in model.layers
        ],
    }


def mlp_from_dict(payload: dict) -> Mlp:
    if payload.get("format") != MODEL_FORMAT:
        raise UsageError(f"not a {MODEL_FORMAT} payload")
    if payload.get("version") != MODEL_VERSION:
        raise UsageError(f"unsupported model version {payload.get('version')}")
    layers = []
    for spec in payload["layers"]:
        layer = DenseLayer(
            weights=np.asarray(spec["weights"], dtype=float),
            bias=np.asarray(spec["bias"], dtype=float),
            activation=Activation(spec["activation"]),
        )
        if spec.get("mask") is not None:
            layer.mask = np.asarray(spec["mask"], dtype=bool)
        layers.append(layer)
    return Mlp(layers=layers)


def save_mlp(model: Mlp, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(model), sort_keys=True))


def load_mlp(path: Union[str, Path]) -> Mlp:
    return mlp_from_dict(json.loads(Path(path).read_text()))
