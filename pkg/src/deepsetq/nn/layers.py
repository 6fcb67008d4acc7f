"""Dense, LSTM and 2-D convolution layers with hand-derived gradients.

Each layer is available as a pair of pure functions (``*_forward`` /
``*_backward``) and as a small class bound to views of a network's
:class:`~deepsetq.nn.params.ParameterSet` and its gradient buffer. The
classes keep the forward cache needed by ``backward`` and accumulate
parameter gradients in place.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")
# Gate blocks of the stacked LSTM weight matrices, in row order.
LSTM_GATES = ("input", "forget", "cell", "output")


class ShapeError(ValueError):
    """Raised when an input does not match a layer's expected shape."""


class MissingCacheError(RuntimeError):
    """Raised when ``backward`` is called without a preceding training forward."""


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


# --------------------------------------------------------------------- dense

def dense_forward(weight: np.ndarray, bias: np.ndarray, x: np.ndarray, activation: str = "relu"):
    """Return ``(act(x @ W.T + b), cache)`` for a batch ``x`` of shape [batch, in]."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense input shape {x.shape} incompatible with weight shape {weight.shape}")
    # Accumulate in float64 so a row's output does not depend on the batch it sits in.
    z = x.astype(np.float64, copy=False) @ weight.T.astype(np.float64, copy=False)
    z += bias
    z = z.astype(np.result_type(x.dtype, weight.dtype), copy=False)
    y = np.maximum(z, 0) if activation == "relu" else z
    return y, (x, z, activation)


def dense_backward(weight: np.ndarray, cache, grad_out: np.ndarray):
    """Gradients ``(grad_weight, grad_bias, grad_input)`` of a dense layer.

    The ReLU derivative at exactly zero is taken as zero.
    """
    if cache is None:
        raise MissingCacheError("dense_backward called without a cached forward pass")
    x, z, activation = cache
    g = grad_out * (z > 0) if activation == "relu" else grad_out
    return g.T @ x, g.sum(axis=0), g @ weight


# ---------------------------------------------------------------------- lstm

def lstm_step(w_input: np.ndarray, w_hidden: np.ndarray, bias: np.ndarray,
              x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One LSTM update for a batch. Returns ``(h_new, c_new, cache)``.

    Weights stack the gate blocks as (input, forget, cell, output) along the
    first axis, each block ``hidden`` rows tall.
    """
    hidden = w_hidden.shape[1]
    if x.shape[-1] != w_input.shape[1]:
        raise ShapeError(f"lstm input shape {x.shape} incompatible with weight shape {w_input.shape}")
    if h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise ShapeError(f"lstm state shapes {h.shape}/{c.shape} do not match hidden size {hidden}")
    z = x @ w_input.T + h @ w_hidden.T + bias
    i = sigmoid(z[:, :hidden])
    f = sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = sigmoid(z[:, 3 * hidden:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def lstm_step_backward(w_input: np.ndarray, w_hidden: np.ndarray, cache, grad_h: np.ndarray,
                       grad_c: np.ndarray):
    """Backward through one :func:`lstm_step`.

    Returns ``(grad_w_input, grad_w_hidden, grad_bias, grad_x, grad_h_prev, grad_c_prev)``.
    """
    if cache is None:
        raise MissingCacheError("lstm_step_backward called without a cached forward pass")
    x, h, c, i, f, g, o, tc = cache
    dc = grad_c + grad_h * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        grad_h * tc * o * (1.0 - o),
    ], axis=1)
    return (dz.T @ x, dz.T @ h, dz.sum(axis=0), dz @ w_input, dz @ w_hidden, dc * f)


# -------------------------------------------------------------------- conv2d

def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) zero padding so that out = ceil(size / stride)."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv2d_forward(kernels: np.ndarray, bias: np.ndarray, x: np.ndarray, stride: tuple[int, int]):
    """Zero-padded strided cross-correlation plus bias, followed by ReLU.

    ``x`` is [batch, channels, H, W], ``kernels`` is [filters, channels, kh, kw].
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-d input, got shape {x.shape}")
    n_filters, channels, kh, kw = kernels.shape
    batch, in_ch, height, width = x.shape
    if in_ch != channels:
        raise ShapeError(f"conv2d input shape {x.shape} has {in_ch} channels, kernels {kernels.shape} expect {channels}")
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ValueError(f"strides must be positive, got {stride}")
    ho, top, bottom = same_padding(height, kh, sh)
    wo, left, right = same_padding(width, kw, sw)
    if kh > height + top + bottom or kw > width + left + right:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input {(height + top + bottom, width + left + right)}")
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    # [batch, ho, wo, channels * kh * kw]
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * ho * wo, channels * kh * kw)
    z = patches @ kernels.reshape(n_filters, -1).T + bias
    z = z.reshape(batch, ho, wo, n_filters).transpose(0, 3, 1, 2)
    y = np.maximum(z, 0)
    return y, (x.shape, xp.shape, (top, left), patches, z, stride)


def conv2d_backward(kernels: np.ndarray, cache, grad_out: np.ndarray):
    """Gradients ``(grad_kernels, grad_bias, grad_input)`` of :func:`conv2d_forward`."""
    if cache is None:
        raise MissingCacheError("conv2d_backward called without a cached forward pass")
    x_shape, xp_shape, (top, left), patches, z, (sh, sw) = cache
    n_filters, channels, kh, kw = kernels.shape
    batch, _, ho, wo = z.shape
    g = (grad_out * (z > 0)).transpose(0, 2, 3, 1).reshape(-1, n_filters)
    grad_k = (g.T @ patches).reshape(kernels.shape)
    grad_b = g.sum(axis=0)
    dpatch = (g @ kernels.reshape(n_filters, -1)).reshape(batch, ho, wo, channels, kh, kw)
    dxp = np.zeros(xp_shape, dtype=grad_out.dtype)
    for a in range(kh):
        for b in range(kw):
            dxp[:, :, a:a + sh * ho:sh, b:b + sw * wo:sw] += dpatch[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    h, w = x_shape[2], x_shape[3]
    return grad_k, grad_b, dxp[:, :, top:top + h, left:left + w]


# ------------------------------------------------------------- bound layers

def _uniform(rng: np.random.Generator, arr: np.ndarray, fan_in: int) -> None:
    bound = math.sqrt(1.0 / fan_in)
    arr[...] = rng.uniform(-bound, bound, size=arr.shape)


class Dense:
    """Fully connected layer bound to named parameter views."""

    def __init__(self, params, grads, prefix: str, activation: str = "relu"):
        _check_activation(activation)
        self.prefix = prefix
        self.activation = activation
        self.weight = params[f"{prefix}.weight"]
        self.bias = params[f"{prefix}.bias"]
        self.grad_weight = grads[f"{prefix}.weight"] if grads is not None else None
        self.grad_bias = grads[f"{prefix}.bias"] if grads is not None else None
        self._cache = None

    @staticmethod
    def shapes(prefix: str, n_in: int, n_out: int):
        return [(f"{prefix}.weight", (n_out, n_in)), (f"{prefix}.bias", (n_out,))]

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def init(self, rng: np.random.Generator) -> None:
        _uniform(rng, self.weight, self.n_in)
        _uniform(rng, self.bias, self.n_in)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y, cache = dense_forward(self.weight, self.bias, x, self.activation)
        self._cache = cache if train else None
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        gw, gb, gx = dense_backward(self.weight, self._cache, grad_out)
        self.grad_weight += gw
        self.grad_bias += gb
        self._cache = None
        return gx


class LSTMCell:
    """LSTM cell with gate order (input, forget, cell, output)."""

    def __init__(self, params, grads, prefix: str):
        self.prefix = prefix
        self.w_input = params[f"{prefix}.w_input"]
        self.w_hidden = params[f"{prefix}.w_hidden"]
        self.bias = params[f"{prefix}.bias"]
        if grads is not None:
            self.grad_w_input = grads[f"{prefix}.w_input"]
            self.grad_w_hidden = grads[f"{prefix}.w_hidden"]
            self.grad_bias = grads[f"{prefix}.bias"]

    @staticmethod
    def shapes(prefix: str, n_in: int, hidden: int):
        return [(f"{prefix}.w_input", (4 * hidden, n_in)),
                (f"{prefix}.w_hidden", (4 * hidden, hidden)),
                (f"{prefix}.bias", (4 * hidden,))]

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[1]

    def init(self, rng: np.random.Generator) -> None:
        _uniform(rng, self.w_input, self.w_input.shape[1])
        _uniform(rng, self.w_hidden, self.hidden)
        _uniform(rng, self.bias, self.hidden)

    def step(self, x, h, c):
        return lstm_step(self.w_input, self.w_hidden, self.bias, x, h, c)

    def step_backward(self, cache, grad_h, grad_c):
        gwi, gwh, gb, gx, gh, gc = lstm_step_backward(self.w_input, self.w_hidden, cache, grad_h, grad_c)
        self.grad_w_input += gwi
        self.grad_w_hidden += gwh
        self.grad_bias += gb
        return gx, gh, gc


class Conv2d:
    """Same-padded strided convolution followed by ReLU."""

    def __init__(self, params, grads, prefix: str, stride: tuple[int, int]):
        self.prefix = prefix
        self.stride = tuple(stride)
        self.kernels = params[f"{prefix}.kernels"]
        self.bias = params[f"{prefix}.bias"]
        self.grad_kernels = grads[f"{prefix}.kernels"] if grads is not None else None
        self.grad_bias = grads[f"{prefix}.bias"] if grads is not None else None
        self._cache = None

    @staticmethod
    def shapes(prefix: str, in_channels: int, filters: int, kernel: tuple[int, int]):
        return [(f"{prefix}.kernels", (filters, in_channels, kernel[0], kernel[1])),
                (f"{prefix}.bias", (filters,))]

    def init(self, rng: np.random.Generator) -> None:
        fan_in = int(np.prod(self.kernels.shape[1:]))
        _uniform(rng, self.kernels, fan_in)
        _uniform(rng, self.bias, fan_in)

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        kh, kw = self.kernels.shape[2:]
        return (self.kernels.shape[0], same_padding(height, kh, self.stride[0])[0],
                same_padding(width, kw, self.stride[1])[0])

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        y, cache = conv2d_forward(self.kernels, self.bias, x, self.stride)
        self._cache = cache if train else None
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        gk, gb, gx = conv2d_backward(self.kernels, self._cache, grad_out)
        self.grad_kernels += gk
        self.grad_bias += gb
        self._cache = None
        return gx
