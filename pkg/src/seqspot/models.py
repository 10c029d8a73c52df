"""Frame-labeled detector and windowed attention classifier.

Both models share the recurrent encoder from nn. The frame-labeled
detector emits a keyword probability every frame; the attention model
pools encoder states into a context vector and classifies whole windows
(fixed-length at training time, a sliding 100-frame buffer at runtime).
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataError
from .features import FEATURE_DIM

KWSM_MAGIC = b"KWSM"
CHECKPOINT_VERSION = 1

DEFAULT_ATTN_DIM = 128
DEFAULT_TRAIN_LEN = 189
DEFAULT_RUNTIME_WINDOW = 100


@dataclass(frozen=True)
class EncoderConfig:
    cell_kind: str = "gru"
    num_layers: int = 1
    hidden_units: int = 64
    input_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.cell_kind not in ("lstm", "gru"):
            raise ValueError(f"unknown cell kind {self.cell_kind!r}")
        if self.num_layers < 1 or self.hidden_units < 1 or self.input_dim < 1:
            raise ValueError("layers, units and input dim must be positive")


def _build_encoder(cfg: EncoderConfig, store: nn.ParamStore, rng, dtype):
    layers = []
    for li in range(cfg.num_layers):
        in_dim = cfg.input_dim if li == 0 else cfg.hidden_units
        cell = nn.init_cell_params(cfg.cell_kind, in_dim, cfg.hidden_units, rng, dtype)
        store.register(f"enc{li}.W", cell.W, decay=True)
        store.register(f"enc{li}.U", cell.U, decay=True)
        store.register(f"enc{li}.b", cell.b, decay=False)
        layers.append(cell)
    return layers


def _softmax_pair(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


class Seq2SeqModel:
    """Stacked RNN encoder plus a per-frame two-class softmax head."""

    kind = "seq2seq"

    def __init__(self, cfg: EncoderConfig, store, layers, head_W, head_b):
        self.cfg = cfg
        self.params = store
        self.layers = layers
        self.head_W = head_W
        self.head_b = head_b

    @classmethod
    def build(cls, cfg: EncoderConfig, seed: int = 0, dtype=np.float32) -> "Seq2SeqModel":
        store = nn.ParamStore()
        rng = nn.sub_seed(seed, "init")
        layers = _build_encoder(cfg, store, rng, dtype)
        head_W = store.register("head.W", nn.glorot_init(cfg.hidden_units, 2, rng, dtype), decay=True)
        head_b = store.register("head.b", nn.zero_init_bias(2, dtype), decay=False)
        return cls(cfg, store, layers, head_W, head_b)

    @property
    def dtype(self):
        return self.head_W.dtype

    def init_state(self):
        return [nn.cell_zero_state(p, 1, self.dtype) for p in self.layers]

    def step(self, state, x_row: np.ndarray):
        """Advance one frame; returns (new_state, keyword probability)."""
        x = np.asarray(x_row, dtype=self.dtype).reshape(1, -1)
        new_state = []
        h = x
        for params, layer_state in zip(self.layers, state):
            layer_state, h, _ = nn.cell_step(params, layer_state, h)
            new_state.append(layer_state)
        logits = nn.linear_forward(h, self.head_W, self.head_b)
        return new_state, float(_softmax_pair(logits)[0, 1])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Per-frame keyword probabilities for one utterance (T, 40).

        Causal by construction: output t is a function of rows <= t.
        """
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ValueError(f"expected (T, {self.cfg.input_dim}) features, got {x.shape}")
        h_top, _, _ = nn.rnn_sequence_forward(self.layers, x[:, None, :], keep_cache=False)
        y = np.empty(x.shape[0], dtype=np.float64)
        for t in range(x.shape[0]):
            logits = nn.linear_forward(h_top[t], self.head_W, self.head_b)
            y[t] = _softmax_pair(logits)[0, 1]
        return y

    def forward_batch(self, x: np.ndarray, keep_cache: bool):
        """Training-path forward on (T, B, D); returns (logits, caches, h_top)."""
        h_top, caches, _ = nn.rnn_sequence_forward(self.layers, x, keep_cache=keep_cache)
        logits = nn.linear_forward(h_top, self.head_W, self.head_b)
        return logits, caches, h_top

    def backward_batch(self, caches, h_top, dlogits):
        """Gradients for a forward_batch call; returns a name-keyed dict."""
        dh_top, dW_head, db_head = nn.linear_backward(h_top, self.head_W, dlogits)
        layer_grads, _ = nn.rnn_sequence_backward(self.layers, caches, dh_top)
        grads = {"head.W": dW_head, "head.b": db_head}
        for li, (dW, dU, db) in enumerate(layer_grads):
            grads[f"enc{li}.W"] = dW
            grads[f"enc{li}.U"] = dU
            grads[f"enc{li}.b"] = db
        return grads

    def config_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cell": self.cfg.cell_kind,
            "layers": self.cfg.num_layers,
            "units": self.cfg.hidden_units,
            "input_dim": self.cfg.input_dim,
        }


class AttentionModel:
    """Encoder with soft attention pooling and a window-level classifier.

    Scoring is e_t = v . tanh(W h_t); the attention weights are the
    softmax of e over the window and the context is their weighted sum of
    encoder states. Training uses fixed-length windows; at runtime the
    attention spans a ring buffer of the most recent encoder states.
    """

    kind = "attention"

    def __init__(self, cfg, store, layers, att_W, att_v, head_W, head_b,
                 attn_dim, train_len, runtime_window):
        self.cfg = cfg
        self.params = store
        self.layers = layers
        self.att_W = att_W
        self.att_v = att_v
        self.head_W = head_W
        self.head_b = head_b
        self.attn_dim = attn_dim
        self.train_len = train_len
        self.runtime_window = runtime_window

    @classmethod
    def build(
        cls,
        cfg: EncoderConfig,
        seed: int = 0,
        dtype=np.float32,
        attn_dim: int = DEFAULT_ATTN_DIM,
        train_len: int = DEFAULT_TRAIN_LEN,
        runtime_window: int = DEFAULT_RUNTIME_WINDOW,
    ) -> "AttentionModel":
        store = nn.ParamStore()
        rng = nn.sub_seed(seed, "init")
        layers = _build_encoder(cfg, store, rng, dtype)
        att_W = store.register(
            "att.W", nn.glorot_init(cfg.hidden_units, attn_dim, rng, dtype), decay=True
        )
        att_v = store.register(
            "att.v", nn.glorot_init(attn_dim, 1, rng, dtype).reshape(-1), decay=True
        )
        head_W = store.register("head.W", nn.glorot_init(cfg.hidden_units, 2, rng, dtype), decay=True)
        head_b = store.register("head.b", nn.zero_init_bias(2, dtype), decay=False)
        return cls(cfg, store, layers, att_W, att_v, head_W, head_b,
                   attn_dim, train_len, runtime_window)

    @property
    def dtype(self):
        return self.head_W.dtype

    def forward_window(self, x: np.ndarray):
        """Classify one window of frames; returns (prob pair, attention weights)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("attention window must contain at least one frame")
        h, _, _ = nn.rnn_sequence_forward(self.layers, x[:, None, :], keep_cache=False)
        h = h[:, 0, :]
        u = np.tanh(h @ self.att_W.T)
        e = u @ self.att_v
        a = _softmax_vec(e)
        context = a @ h
        logits = nn.linear_forward(context[None, :], self.head_W, self.head_b)
        return _softmax_pair(logits)[0], a

    def init_state(self):
        states = [nn.cell_zero_state(p, 1, self.dtype) for p in self.layers]
        return {
            "layers": states,
            "h_buf": deque(maxlen=self.runtime_window),
            "e_buf": deque(maxlen=self.runtime_window),
        }

    def step(self, state, x_row: np.ndarray):
        """One runtime frame: encoder advances once, attention re-pools the buffer."""
        x = np.asarray(x_row, dtype=self.dtype).reshape(1, -1)
        h = x
        new_layers = []
        for params, layer_state in zip(self.layers, state["layers"]):
            layer_state, h, _ = nn.cell_step(params, layer_state, h)
            new_layers.append(layer_state)
        state["layers"] = new_layers
        u = np.tanh(h @ self.att_W.T)
        state["h_buf"].append(h[0])
        state["e_buf"].append(float(u[0] @ self.att_v))
        e = np.asarray(state["e_buf"], dtype=self.dtype)
        a = _softmax_vec(e)
        h_win = np.asarray(state["h_buf"], dtype=self.dtype)
        context = a @ h_win
        logits = nn.linear_forward(context[None, :], self.head_W, self.head_b)
        return state, float(_softmax_pair(logits)[0, 1])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Sliding-window probability track over a whole utterance."""
        state = self.init_state()
        y = np.empty(x.shape[0], dtype=np.float64)
        for t in range(x.shape[0]):
            state, y[t] = self.step(state, x[t])
        return y

    def attention_track(self, x: np.ndarray):
        """Per-frame attention weight vectors over the runtime buffer."""
        state = self.init_state()
        tracks = []
        for t in range(x.shape[0]):
            state, _ = self.step(state, x[t])
            e = np.asarray(state["e_buf"], dtype=self.dtype)
            tracks.append(_softmax_vec(e))
        return tracks

    def forward_batch(self, x: np.ndarray, keep_cache: bool):
        """Training forward on (T, B, D) windows; returns (logits, cache)."""
        h, caches, _ = nn.rnn_sequence_forward(self.layers, x, keep_cache=keep_cache)
        u = np.tanh(np.einsum("tbh,dh->tbd", h, self.att_W))
        e = u @ self.att_v  # (T, B)
        e_max = e.max(axis=0, keepdims=True)
        a_exp = np.exp(e - e_max)
        a = a_exp / a_exp.sum(axis=0, keepdims=True)
        context = np.einsum("tb,tbh->bh", a, h)
        logits = nn.linear_forward(context, self.head_W, self.head_b)
        cache = (caches, h, u, a, context)
        return logits, cache

    def backward_batch(self, cache, dlogits):
        caches, h, u, a, context = cache
        dcontext, dW_head, db_head = nn.linear_backward(context, self.head_W, dlogits)
        da = np.einsum("bh,tbh->tb", dcontext, h)
        dh = a[:, :, None] * dcontext[None, :, :]
        de = a * (da - (a * da).sum(axis=0, keepdims=True))
        dv = np.einsum("tb,tbd->d", de, u)
        du_pre = (de[:, :, None] * self.att_v[None, None, :]) * (1.0 - u * u)
        dW_att = np.einsum("tbd,tbh->dh", du_pre, h)
        dh += np.einsum("tbd,dh->tbh", du_pre, self.att_W)
        layer_grads, _ = nn.rnn_sequence_backward(self.layers, caches, dh)
        grads = {
            "head.W": dW_head,
            "head.b": db_head,
            "att.W": dW_att,
            "att.v": dv,
        }
        for li, (dW, dU, db) in enumerate(layer_grads):
            grads[f"enc{li}.W"] = dW
            grads[f"enc{li}.U"] = dU
            grads[f"enc{li}.b"] = db
        return grads

    def config_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cell": self.cfg.cell_kind,
            "layers": self.cfg.num_layers,
            "units": self.cfg.hidden_units,
            "input_dim": self.cfg.input_dim,
            "attn_dim": self.attn_dim,
            "train_len": self.train_len,
            "runtime_window": self.runtime_window,
        }


def _softmax_vec(e: np.ndarray) -> np.ndarray:
    m = e.max()
    ex = np.exp(e - m)
    return ex / ex.sum()


def build_model(kind: str, cfg: EncoderConfig, seed: int = 0, dtype=np.float32, **kwargs):
    if kind == "seq2seq":
        return Seq2SeqModel.build(cfg, seed=seed, dtype=dtype)
    if kind == "attention":
        return AttentionModel.build(cfg, seed=seed, dtype=dtype, **kwargs)
    raise ValueError(f"unknown model kind {kind!r}")


def param_count(model) -> int:
    """Exact number of trainable scalars in the model."""
    return model.params.total_count()


def params_k(count: int) -> float:
    """Parameter count rounded for display, in thousands with one decimal."""
    return round(count / 1000.0, 1)


def save_checkpoint(path, model) -> None:
    """Binary checkpoint plus a JSON sidecar with shapes and a checksum."""
    config = json.dumps(model.config_dict(), sort_keys=True).encode("utf-8")
    payload = model.params.pack()
    with open(path, "wb") as fh:
        fh.write(KWSM_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(config)))
        fh.write(config)
        fh.write(payload)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "params": [
            {"name": n, "shape": list(model.params[n].shape)} for n in model.params.names()
        ],
        "sha256": model.params.checksum(),
    }
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != KWSM_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, not a model checkpoint")
        version, config_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        config = json.loads(fh.read(config_len).decode("utf-8"))
        payload = fh.read()
    cfg = EncoderConfig(
        cell_kind=config["cell"],
        num_layers=config["layers"],
        hidden_units=config["units"],
        input_dim=config["input_dim"],
    )
    if config["kind"] == "seq2seq":
        model = Seq2SeqModel.build(cfg, seed=0, dtype=dtype)
    elif config["kind"] == "attention":
        model = AttentionModel.build(
            cfg,
            seed=0,
            dtype=dtype,
            attn_dim=config["attn_dim"],
            train_len=config["train_len"],
            runtime_window=config["runtime_window"],
        )
    else:
        raise DataError(f"{path}: unknown model kind {config['kind']!r}")
    try:
        model.params.unpack(payload)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return model


def export_frame_probabilities(model, x: np.ndarray, path, attention_path=None) -> None:
    """Dump the per-frame probability track as TSV, one frame per line.

    For the attention model, attention_path additionally receives one line
    per frame with the weights over its current runtime buffer.
    """
    y = model.forward(x)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame\tprobability\n")
        for t, val in enumerate(y):
            fh.write(f"{t}\t{val:.9g}\n")
    if attention_path is not None and isinstance(model, AttentionModel):
        tracks = model.attention_track(x)
        with open(attention_path, "w", encoding="utf-8") as fh:
            for t, weights in enumerate(tracks):
                fh.write(str(t) + "\t" + "\t".join(f"{w:.9g}" for w in weights) + "\n")
