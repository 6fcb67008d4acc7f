"""Encoders and the shared dense head.

A network is an encoder producing a fixed-width representation of the
dynamic input, concatenated with the 3 static features and passed through
the dense head. Architectures are plain dicts so they can be embedded in
checkpoints:

    {"kind": "deepset", "phi": [20, 80], "rho": [80, 20], "pooling": "sum", "head": [100, 100]}
    {"kind": "set2set", "lstm_hidden": 6, "lstm_layers": 1, "dense": 32, "iterations": 5, "head": [100, 100]}
    {"kind": "fixed", "head": [100, 100]}
    {"kind": "grid", "filters": [16, 32], "kernels": [[3, 1], [3, 1]], "strides": [[2, 1], [2, 1]], "head": [100, 100]}
"""

from __future__ import annotations

import copy

import numpy as np

from ..nn.layers import Conv2d, Dense, LSTMCell
from ..nn.params import ParameterSet
from .features import N_FEATURES, N_STATIC, Observation, SetBatch, StateBatch
from .grids import OccupancyGridSpec, RelationalGridSpec

ENCODER_KINDS = ("deepset", "set2set", "fixed", "grid")
N_ACTIONS = 3

DEFAULT_ARCHS = {
    "deepset": {"kind": "deepset", "phi": [20, 80], "rho": [80, 20], "pooling": "sum", "head": [100, 100]},
    "set2set": {"kind": "set2set", "lstm_hidden": 6, "lstm_layers": 1, "dense": 32, "iterations": 5,
                "head": [100, 100]},
    "fixed": {"kind": "fixed", "head": [100, 100]},
    "grid": {"kind": "grid", "filters": [16, 32], "kernels": [[3, 1], [3, 1]], "strides": [[2, 1], [2, 1]],
             "head": [100, 100]},
}


def default_arch(kind: str) -> dict:
    if kind not in DEFAULT_ARCHS:
        raise ValueError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")
    return copy.deepcopy(DEFAULT_ARCHS[kind])


def segment_softmax(scores: np.ndarray, sets: SetBatch) -> np.ndarray:
    """Softmax of per-element scores within each set."""
    if not len(scores):
        return scores.copy()
    starts = sets.offsets[sets.nonempty]
    peak = np.zeros(sets.size, dtype=scores.dtype)
    peak[sets.nonempty] = np.maximum.reduceat(scores, starts)
    ex = np.exp(scores - peak[sets.segments])
    total = sets.segment_sum(ex)
    return (ex / total[sets.segments]).astype(scores.dtype, copy=False)


class DeepSetEncoder:
    """``rho(pool(phi(x)))`` with sum or max pooling; empty sets pool to zeros."""

    def __init__(self, params, grads, arch, prefix="encoder"):
        self.pooling = arch.get("pooling", "sum")
        if self.pooling not in ("sum", "max"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        self.phi = [Dense(params, grads, f"{prefix}.phi.{i}") for i in range(len(arch["phi"]))]
        self.rho = [Dense(params, grads, f"{prefix}.rho.{i}") for i in range(len(arch["rho"]))]
        self.out_dim = arch["rho"][-1]
        self._cache = None

    @staticmethod
    def shapes(arch, prefix="encoder"):
        if not arch["phi"] or not arch["rho"]:
            raise ValueError("phi and rho need at least one layer each")
        shapes, n_in = [], N_FEATURES
        for i, n in enumerate(arch["phi"]):
            shapes += Dense.shapes(f"{prefix}.phi.{i}", n_in, n)
            n_in = n
        for i, n in enumerate(arch["rho"]):
            shapes += Dense.shapes(f"{prefix}.rho.{i}", n_in, n)
            n_in = n
        return shapes

    def layers(self):
        return self.phi + self.rho

    def pool(self, sets: SetBatch, h: np.ndarray) -> np.ndarray:
        if self.pooling == "sum":
            return sets.segment_sum(h).astype(h.dtype)
        return sets.segment_max(h)

    def forward(self, batch: StateBatch, train: bool = False) -> np.ndarray:
        sets = batch.sets
        h = sets.features.astype(self.phi[0].weight.dtype, copy=False)
        for layer in self.phi:
            h = layer.forward(h, train)
        pooled = self.pool(sets, h)
        out = pooled
        for layer in self.rho:
            out = layer.forward(out, train)
        self._cache = (sets, h, pooled) if train else None
        return out

    def backward(self, grad_out: np.ndarray) -> None:
        sets, h, pooled = self._cache
        g = grad_out
        for layer in reversed(self.rho):
            g = layer.backward(g)
        if self.pooling == "sum":
            gh = g[sets.segments]
        else:
            gh = g[sets.segments] * (h == pooled[sets.segments])
        for layer in reversed(self.phi):
            gh = layer.backward(gh)
        self._cache = None


class Set2SetEncoder:
    """LSTM query attending over the set for K iterations, then a dense readout.

    The query is projected to the element dimension before the dot-product
    scores ``e_j = x_j . (P q)``. Sets with no elements produce ``q*_K = 0``.
    """

    def __init__(self, params, grads, arch, prefix="encoder"):
        self.hidden = arch["lstm_hidden"]
        self.iterations = arch["iterations"]
        self.cells = [LSTMCell(params, grads, f"{prefix}.lstm.{i}") for i in range(arch.get("lstm_layers", 1))]
        self.query = params[f"{prefix}.query"]
        self.grad_query = grads[f"{prefix}.query"] if grads is not None else None
        self.dense = Dense(params, grads, f"{prefix}.dense")
        self.out_dim = arch["dense"]
        self.last_attention: list[np.ndarray] = []
        self._cache = None

    @staticmethod
    def shapes(arch, prefix="encoder"):
        hidden = arch["lstm_hidden"]
        if arch["iterations"] < 1:
            raise ValueError("set2set needs at least one iteration")
        shapes, n_in = [], hidden + N_FEATURES
        for i in range(arch.get("lstm_layers", 1)):
            shapes += LSTMCell.shapes(f"{prefix}.lstm.{i}", n_in, hidden)
            n_in = hidden
        shapes.append((f"{prefix}.query", (N_FEATURES, hidden)))
        shapes += Dense.shapes(f"{prefix}.dense", hidden + N_FEATURES, arch["dense"])
        return shapes

    def layers(self):
        return self.cells + [self.dense]

    def init(self, rng):
        for cell in self.cells:
            cell.init(rng)
        bound = np.sqrt(1.0 / self.hidden)
        self.query[...] = rng.uniform(-bound, bound, size=self.query.shape)
        self.dense.init(rng)

    def read(self, batch: StateBatch, iterations: int | None = None, train: bool = False) -> np.ndarray:
        """Return ``q*_K`` for every set, shape [batch, hidden + 3]."""
        sets = batch.sets
        dtype = self.query.dtype
        x = sets.features.astype(dtype, copy=False)
        seg = sets.segments
        b = sets.size
        k_total = self.iterations if iterations is None else iterations
        n_layers = len(self.cells)
        hs = [np.zeros((b, self.hidden), dtype) for _ in range(n_layers)]
        cs = [np.zeros((b, self.hidden), dtype) for _ in range(n_layers)]
        qstar = np.zeros((b, self.hidden + N_FEATURES), dtype)
        steps = []
        self.last_attention = []
        for _ in range(k_total):
            inp = qstar
            cell_caches = []
            for layer, cell in enumerate(self.cells):
                hs[layer], cs[layer], cache = cell.step(inp, hs[layer], cs[layer])
                cell_caches.append(cache)
                inp = hs[layer]
            q = hs[-1]
            u = q @ self.query.T
            scores = np.einsum("ij,ij->i", x, u[seg]) if len(x) else np.zeros(0, dtype)
            alpha = segment_softmax(scores, sets)
            beta = sets.segment_sum(alpha[:, None] * x).astype(dtype)
            qstar = np.concatenate([q, beta], axis=1)
            self.last_attention.append(alpha)
            steps.append((cell_caches, q, alpha))
        mask = (sets.lengths > 0).astype(dtype)[:, None]
        qstar = qstar * mask
        self._cache = (sets, x, mask, steps) if train else None
        return qstar

    def forward(self, batch: StateBatch, train: bool = False) -> np.ndarray:
        return self.dense.forward(self.read(batch, train=train), train)

    def backward(self, grad_out: np.ndarray) -> None:
        sets, x, mask, steps = self._cache
        seg = sets.segments
        g_qstar = self.dense.backward(grad_out) * mask
        n_layers = len(self.cells)
        g_h_next = [np.zeros_like(g_qstar[:, :self.hidden]) for _ in range(n_layers)]
        g_c_next = [np.zeros_like(g_qstar[:, :self.hidden]) for _ in range(n_layers)]
        for cell_caches, q, alpha in reversed(steps):
            g_q = g_qstar[:, :self.hidden] + g_h_next[-1]
            g_beta = g_qstar[:, self.hidden:]
            if len(x):
                g_alpha = np.einsum("ij,ij->i", x, g_beta[seg])
                weighted = sets.segment_sum(alpha * g_alpha).astype(x.dtype)
                g_scores = alpha * (g_alpha - weighted[seg])
                g_u = sets.segment_sum(g_scores[:, None] * x).astype(x.dtype)
                self.grad_query += g_u.T @ q
                g_q = g_q + g_u @ self.query
            g_top = g_q
            for layer in reversed(range(n_layers)):
                g_h = g_top if layer == n_layers - 1 else g_top + g_h_next[layer]
                g_in, g_h_prev, g_c_prev = self.cells[layer].step_backward(
                    cell_caches[layer], g_h, g_c_next[layer])
                g_h_next[layer] = g_h_prev
                g_c_next[layer] = g_c_prev
                g_top = g_in
            g_qstar = g_top
        self._cache = None


class FixedEncoder:
    """Passes through the 40 relational-grid slot features."""

    def __init__(self, params, grads, arch, prefix="encoder"):
        self.spec = RelationalGridSpec()
        self.out_dim = 2 * self.spec.n_slots

    @staticmethod
    def shapes(arch, prefix="encoder"):
        return []

    def layers(self):
        return []

    def forward(self, batch: StateBatch, train: bool = False) -> np.ndarray:
        return batch.relational[:, :self.out_dim]

    def backward(self, grad_out: np.ndarray) -> None:
        pass


class GridEncoder:
    """All-convolutional stack over the 80x5 occupancy grid, flattened."""

    def __init__(self, params, grads, arch, prefix="encoder"):
        spec = OccupancyGridSpec()
        self.convs = [Conv2d(params, grads, f"{prefix}.conv.{i}", tuple(s))
                      for i, s in enumerate(arch["strides"])]
        shape = (1, spec.rows, spec.cols)
        for conv in self.convs:
            shape = conv.output_shape(shape[1], shape[2])
        self.feature_shape = shape
        self.out_dim = int(np.prod(shape))
        self._shape = None

    @staticmethod
    def shapes(arch, prefix="encoder"):
        if not (len(arch["filters"]) == len(arch["kernels"]) == len(arch["strides"])):
            raise ValueError("filters, kernels and strides must have equal length")
        shapes, ch = [], 1
        for i, (f, k) in enumerate(zip(arch["filters"], arch["kernels"])):
            shapes += Conv2d.shapes(f"{prefix}.conv.{i}", ch, f, tuple(k))
            ch = f
        return shapes

    def layers(self):
        return self.convs

    def forward(self, batch: StateBatch, train: bool = False) -> np.ndarray:
        h = batch.occupancy.astype(self.convs[0].kernels.dtype, copy=False)
        for conv in self.convs:
            h = conv.forward(h, train)
        self._shape = h.shape
        return h.reshape(h.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> None:
        g = grad_out.reshape(self._shape)
        for conv in reversed(self.convs):
            g = conv.backward(g)


ENCODERS = {"deepset": DeepSetEncoder, "set2set": Set2SetEncoder, "fixed": FixedEncoder, "grid": GridEncoder}


def _encoder_out_dim(arch) -> int:
    kind = arch["kind"]
    if kind == "deepset":
        return arch["rho"][-1]
    if kind == "set2set":
        return arch["dense"]
    if kind == "fixed":
        return 2 * RelationalGridSpec().n_slots
    spec = OccupancyGridSpec()
    h, w = spec.rows, spec.cols
    for k, s in zip(arch["kernels"], arch["strides"]):
        h, w = -(-h // s[0]), -(-w // s[1])
    return arch["filters"][-1] * h * w


def q_forward(encoded: np.ndarray, static: np.ndarray, head: list[Dense], train: bool = False) -> np.ndarray:
    """Apply the dense head to ``[encoded, static]``."""
    if encoded.shape[0] != static.shape[0]:
        raise ValueError(f"batch mismatch: encoded {encoded.shape} vs static {static.shape}")
    x = np.concatenate([encoded, static.astype(encoded.dtype, copy=False)], axis=1)
    for layer in head:
        x = layer.forward(x, train)
    return x


class Network:
    """Encoder + dense head with ``n_outputs`` linear outputs."""

    def __init__(self, arch: dict, n_outputs: int = N_ACTIONS, params: ParameterSet | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        kind = arch.get("kind")
        if kind not in ENCODERS:
            raise ValueError(f"unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")
        self.arch = copy.deepcopy(arch)
        self.n_outputs = n_outputs
        shapes = self.parameter_shapes(self.arch, n_outputs)
        if params is None:
            params = ParameterSet(shapes, dtype=dtype)
            fresh = True
        else:
            if params.shapes != dict(shapes) or params.names() != [n for n, _ in shapes]:
                raise ValueError("parameter set does not match the architecture")
            fresh = False
        self.params = params
        self.grads = params.zeros_like()
        self.encoder = ENCODERS[kind](params, self.grads, self.arch)
        sizes = list(self.arch.get("head", [100, 100]))
        acts = ["relu"] * len(sizes) + ["linear"]
        self.head = [Dense(params, self.grads, f"head.{i}", a) for i, a in enumerate(acts)]
        self._enc_dim = self.encoder.out_dim
        if fresh:
            self.init(rng if rng is not None else np.random.default_rng(0))

    @staticmethod
    def parameter_shapes(arch: dict, n_outputs: int = N_ACTIONS):
        shapes = list(ENCODERS[arch["kind"]].shapes(arch))
        n_in = _encoder_out_dim(arch) + N_STATIC
        for i, n in enumerate(list(arch.get("head", [100, 100])) + [n_outputs]):
            shapes += Dense.shapes(f"head.{i}", n_in, n)
            n_in = n
        return shapes

    @property
    def kind(self) -> str:
        return self.arch["kind"]

    @property
    def dtype(self):
        return self.params.dtype

    def init(self, rng: np.random.Generator) -> None:
        if hasattr(self.encoder, "init"):
            self.encoder.init(rng)
        else:
            for layer in self.encoder.layers():
                layer.init(rng)
        for layer in self.head:
            layer.init(rng)

    def zero_grad(self) -> None:
        self.grads.flat[...] = 0

    def encode(self, batch: StateBatch, train: bool = False) -> np.ndarray:
        return self.encoder.forward(batch, train)

    def forward(self, batch: StateBatch, train: bool = False) -> np.ndarray:
        return q_forward(self.encoder.forward(batch, train), batch.static, self.head, train)

    __call__ = forward

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients of ``sum(grad_out * forward(...))`` into ``grads``."""
        g = grad_out.astype(self.dtype, copy=False)
        for layer in reversed(self.head):
            g = layer.backward(g)
        self.encoder.backward(g[:, :self._enc_dim])

    def copy(self) -> Network:
        return Network(self.arch, self.n_outputs, params=self.params.copy())

    def astype(self, dtype) -> Network:
        return Network(self.arch, self.n_outputs, params=self.params.astype(dtype))

    def activation_pattern(self) -> np.ndarray:
        """Which ReLUs are active (and which elements win max pooling) after a training forward.

        Used by gradient checking to discard coordinates whose finite
        difference straddles a kink.
        """
        parts = []
        for layer in list(self.encoder.layers()) + self.head:
            cache = layer._cache if hasattr(layer, "_cache") else None
            if isinstance(layer, Dense) and cache is not None and layer.activation == "relu":
                parts.append((cache[1] > 0).ravel())
            elif isinstance(layer, Conv2d) and cache is not None:
                parts.append((cache[4] > 0).ravel())
        if isinstance(self.encoder, DeepSetEncoder) and self.encoder.pooling == "max" and self.encoder._cache:
            sets, h, pooled = self.encoder._cache
            parts.append((h == pooled[sets.segments]).ravel())
        return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)

    def predict(self, observation: Observation) -> np.ndarray:
        return self.forward(StateBatch.from_observations([observation]))[0]


def deep_set_encode(encoder: DeepSetEncoder, dynamic: np.ndarray) -> np.ndarray:
    """Encode one set with a Deep Set encoder."""
    batch = StateBatch(SetBatch.from_sets([dynamic]), np.zeros((1, N_STATIC), np.float32))
    return encoder.forward(batch)[0]


def set2set_encode(encoder: Set2SetEncoder, dynamic: np.ndarray, iterations: int | None = None) -> np.ndarray:
    """Encode one set with Set2Set; ``iterations`` overrides the configured K."""
    batch = StateBatch(SetBatch.from_sets([dynamic]), np.zeros((1, N_STATIC), np.float32))
    return encoder.dense.forward(encoder.read(batch, iterations))[0]
