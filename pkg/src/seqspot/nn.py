"""Deterministic numerical kernels: init, RNN cells, BPTT, loss, Adam.

Everything here is plain numpy with hand-derived backward passes. Cell
functions operate on (batch, dim) arrays; sequence helpers on
(time, batch, dim). Arrays keep whatever dtype the model was built with
(float32 for training, float64 for gradient checking).
"""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import NumericError

LSTM_GATES = 4  # i, f, g, o
GRU_GATES = 3  # r, z, n


def sub_seed(seed: int, name: str) -> np.random.Generator:
    """Named child RNG so init/shuffle/etc. can be varied independently."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_init(fan_in: int, fan_out: int, rng, dtype=np.float64) -> np.ndarray:
    """Uniform (fan_out, fan_in) matrix with bound sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be at least 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)


def zero_init_bias(dim: int, dtype=np.float64) -> np.ndarray:
    if dim < 1:
        raise ValueError("dim must be at least 1")
    return np.zeros(dim, dtype=dtype)


class ParamStore:
    """Named parameter buffers in a fixed declaration order.

    The order defines the flat serialization layout and the Adam buffer
    layout. decay marks buffers subject to L2 regularization (weight
    matrices yes, biases no).
    """

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}
        self._decay: dict[str, bool] = {}

    def register(self, name: str, array: np.ndarray, decay: bool) -> np.ndarray:
        if name in self._arrays:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._arrays[name] = array
        self._decay[name] = decay
        return array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def names(self) -> list[str]:
        return list(self._arrays)

    def decays(self, name: str) -> bool:
        return self._decay[name]

    def total_count(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._arrays.items()}

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._arrays.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self._arrays.items():
            src = values[name]
            if src.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src

    def pack(self) -> bytes:
        """All buffers concatenated as little-endian float32."""
        return b"".join(
            np.ascontiguousarray(self._arrays[n], dtype="<f4").tobytes() for n in self._arrays
        )

    def unpack(self, payload: bytes) -> None:
        offset = 0
        for name, arr in self._arrays.items():
            nbytes = 4 * arr.size
            chunk = payload[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise ValueError("checkpoint payload too short")
            arr[...] = np.frombuffer(chunk, dtype="<f4").reshape(arr.shape).astype(arr.dtype)
            offset += nbytes
        if offset != len(payload):
            raise ValueError("checkpoint payload has trailing bytes")

    def checksum(self) -> str:
        return hashlib.sha256(self.pack()).hexdigest()


@dataclass
class CellParams:
    """One recurrent layer's weights: W maps input, U maps state, b biases.

    Gate blocks are stacked along the first axis: LSTM (i, f, g, o), GRU
    (r, z, n). A single bias per gate, shared between the input and
    recurrent paths.
    """

    kind: str  # "lstm" or "gru"
    W: np.ndarray  # (gates*H, D)
    U: np.ndarray  # (gates*H, H)
    b: np.ndarray  # (gates*H,)

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def count(self) -> int:
        return self.W.size + self.U.size + self.b.size


def init_cell_params(
    kind: str, input_dim: int, hidden_dim: int, rng: np.random.Generator, dtype
) -> CellParams:
    """Glorot-initialized gate weights, zero biases, one block per gate."""
    gates = LSTM_GATES if kind == "lstm" else GRU_GATES
    W = np.concatenate(
        [glorot_init(input_dim, hidden_dim, rng, dtype) for _ in range(gates)], axis=0
    )
    U = np.concatenate(
        [glorot_init(hidden_dim, hidden_dim, rng, dtype) for _ in range(gates)], axis=0
    )
    b = zero_init_bias(gates * hidden_dim, dtype)
    return CellParams(kind=kind, W=W, U=U, b=b)


def lstm_cell_forward(params: CellParams, x_t, h_prev, c_prev):
    """One LSTM step on (B, D) input; returns (h_t, c_t, cache)."""
    H = params.hidden_dim
    z = x_t @ params.W.T + h_prev @ params.U.T + params.b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c_t = f * c_prev + i * g
    tc = np.tanh(c_t)
    h_t = o * tc
    cache = (x_t, h_prev, c_prev, i, f, g, o, tc)
    return h_t, c_t, cache


def lstm_cell_backward(params: CellParams, cache, dh, dc):
    """Backward for one LSTM step; returns (dx, dh_prev, dc_prev, dW, dU, db)."""
    x_t, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc_total = dc + dh * o * (1.0 - tc * tc)
    di = dc_total * g
    df = dc_total * c_prev
    dg = dc_total * i
    dc_prev = dc_total * f
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
        axis=1,
    )
    dW = dz.T @ x_t
    dU = dz.T @ h_prev
    db = dz.sum(axis=0)
    dx = dz @ params.W
    dh_prev = dz @ params.U
    return dx, dh_prev, dc_prev, dW, dU, db


def gru_cell_forward(params: CellParams, x_t, h_prev):
    """One GRU step on (B, D) input; returns (h_t, cache).

    The candidate gate applies the reset gate to the recurrent term only:
    n = tanh(W_n x + r * (U_n h_prev) + b_n).
    """
    H = params.hidden_dim
    zx = x_t @ params.W.T + params.b
    zh = h_prev @ params.U.T
    r = sigmoid(zx[:, :H] + zh[:, :H])
    z = sigmoid(zx[:, H : 2 * H] + zh[:, H : 2 * H])
    uh_n = zh[:, 2 * H :]
    n = np.tanh(zx[:, 2 * H :] + r * uh_n)
    h_t = (1.0 - z) * n + z * h_prev
    cache = (x_t, h_prev, r, z, n, uh_n)
    return h_t, cache


def gru_cell_backward(params: CellParams, cache, dh):
    """Backward for one GRU step; returns (dx, dh_prev, dW, dU, db)."""
    x_t, h_prev, r, z, n, uh_n = cache
    dz_gate = dh * (h_prev - n)
    dn = dh * (1.0 - z)
    dh_prev = dh * z
    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * uh_n
    dr_pre = dr * r * (1.0 - r)
    dz_pre = dz_gate * z * (1.0 - z)
    dzx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    dzh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
    dW = dzx.T @ x_t
    db = dzx.sum(axis=0)
    dU = dzh.T @ h_prev
    dx = dzx @ params.W
    dh_prev = dh_prev + dzh @ params.U
    return dx, dh_prev, dW, dU, db


def cell_zero_state(params: CellParams, batch: int, dtype):
    h = np.zeros((batch, params.hidden_dim), dtype=dtype)
    if params.kind == "lstm":
        return (h, np.zeros_like(h))
    return (h,)


def cell_step(params: CellParams, state, x_t):
    """Advance one layer by one frame; returns (new_state, h_t, cache)."""
    if params.kind == "lstm":
        h, c, cache = lstm_cell_forward(params, x_t, state[0], state[1])
        return (h, c), h, cache
    h, cache = gru_cell_forward(params, x_t, state[0])
    return (h,), h, cache


def rnn_sequence_forward(
    layers: list[CellParams],
    x: np.ndarray,
    initial_states=None,
    keep_cache: bool = True,
):
    """Run a unidirectional stack over x of shape (T, B, D).

    Returns (h_top (T, B, H), caches, final_states). Initial states default
    to zeros. caches is None when keep_cache is False.
    """
    T, B, _ = x.shape
    dtype = x.dtype
    states = (
        [cell_zero_state(p, B, dtype) for p in layers]
        if initial_states is None
        else list(initial_states)
    )
    caches = [[] for _ in layers] if keep_cache else None
    inputs = x
    for li, params in enumerate(layers):
        outputs = np.empty((T, B, params.hidden_dim), dtype=dtype)
        state = states[li]
        for t in range(T):
            state, h_t, cache = cell_step(params, state, inputs[t])
            outputs[t] = h_t
            if keep_cache:
                caches[li].append(cache)
        states[li] = state
        inputs = outputs
    return inputs, caches, states


def rnn_sequence_backward(layers: list[CellParams], caches, d_top: np.ndarray):
    """Full backpropagation through time for a layer stack.

    d_top holds dL/dh for the top layer's outputs, shape (T, B, H).
    Returns (per-layer [(dW, dU, db)], dX).
    """
    d_out = d_top
    layer_grads: list[tuple] = [None] * len(layers)
    for li in range(len(layers) - 1, -1, -1):
        params = layers[li]
        T, B, _ = d_out.shape
        dW = np.zeros_like(params.W)
        dU = np.zeros_like(params.U)
        db = np.zeros_like(params.b)
        d_in = np.empty((T, B, params.input_dim), dtype=d_out.dtype)
        dh_next = np.zeros((B, params.hidden_dim), dtype=d_out.dtype)
        dc_next = np.zeros_like(dh_next) if params.kind == "lstm" else None
        for t in range(T - 1, -1, -1):
            dh = d_out[t] + dh_next
            if params.kind == "lstm":
                dx, dh_next, dc_next, dW_t, dU_t, db_t = lstm_cell_backward(
                    params, caches[li][t], dh, dc_next
                )
            else:
                dx, dh_next, dW_t, dU_t, db_t = gru_cell_backward(params, caches[li][t], dh)
            dW += dW_t
            dU += dU_t
            db += db_t
            d_in[t] = dx
        layer_grads[li] = (dW, dU, db)
        d_out = d_in
    return layer_grads, d_out


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ W.T + b


def linear_backward(x: np.ndarray, W: np.ndarray, dy: np.ndarray):
    """Returns (dx, dW, db) for y = x W^T + b with x of shape (..., D)."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dW = dy2.T @ x2
    db = dy2.sum(axis=0)
    dx = (dy2 @ W).reshape(x.shape)
    return dx, dW, db


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_softmax_xent(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Weight-normalized cross entropy over two classes.

    logits has shape (..., 2); labels in {0, 1, -1} and weights in {0, 1}
    share the leading shape. Frames with weight 0 (the -1 labels)
    contribute nothing to the loss or the gradient. All weights zero is
    defined as loss 0 with a zero gradient.
    """
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=logits.dtype)
    wsum = weights.sum()
    if wsum == 0:
        return logits.dtype.type(0.0), np.zeros_like(logits)
    logp = log_softmax(logits)
    idx = np.clip(labels, 0, 1).astype(np.int64)
    picked = np.take_along_axis(logp, idx[..., None], axis=-1)[..., 0]
    loss = -(weights * picked).sum() / wsum
    probs = np.exp(logp)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    dlogits = (probs - onehot) * (weights / wsum)[..., None]
    return loss, dlogits


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = 1.0):
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns (grads, pre-clip norm). Raises NumericError on a non-finite
    norm, which is how NaN blowups surface during training.
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericError(f"gradient norm is {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads, norm


def apply_l2(
    loss: float,
    grads: dict[str, np.ndarray],
    params: ParamStore,
    weight_decay: float = 1e-5,
) -> float:
    """Add the L2 penalty to loss and 2*lambda*W to each weight gradient.

    Bias buffers (decay flag off) are untouched. Returns the new loss;
    gradients are updated in place.
    """
    if weight_decay == 0.0:
        return loss
    penalty = 0.0
    for name in params.names():
        if not params.decays(name):
            continue
        w = params[name]
        penalty += float(np.sum(np.asarray(w, dtype=np.float64) ** 2))
        grads[name] += (2.0 * weight_decay) * w
    return loss + weight_decay * penalty


class AdamState:
    """Adam with bias correction; buffers mirror a ParamStore's layout."""

    def __init__(self, params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in params.names():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            params[name] -= update


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Functional wrapper around AdamState.step for one update."""
    state.step(params, grads)
    return state
