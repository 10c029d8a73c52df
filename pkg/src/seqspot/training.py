"""Training loops for both model kinds, plus the dev-set metric hooks.

Batches are padded with zero-weight frames (bucketed by length for the
frame-labeled model, fixed-length windows for the attention model). Each
step runs forward, weighted cross entropy, L2, BPTT, global-norm clipping,
and one Adam update; all shuffling comes from named sub-seeds so runs are
reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import evaluation, nn
from .data import Utterance
from .errors import NumericError
from .features import FrameSpec
from .models import AttentionModel, Seq2SeqModel
from .streaming import smooth_track


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    clip_norm: float = 1.0
    l2_lambda: float = 1e-5
    epochs: int = 10
    seed: int = 1
    precision: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be at least 1")
        if self.learning_rate < 0 or self.clip_norm <= 0 or self.l2_lambda < 0:
            raise ValueError("learning rate, clip norm and L2 must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


@dataclass
class EpochMetrics:
    epoch: int
    step: int
    train_loss: float
    dev_loss: float
    dev_frr_at_target: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "step": self.step,
                "train_loss": self.train_loss,
                "dev_loss": self.dev_loss,
                "dev_frr_at_0.1fa": self.dev_frr_at_target,
            }
        )


@dataclass
class EvalSettings:
    """Knobs the dev metric shares with final evaluation."""

    smooth_frames: int = 12
    lockout_frames: int = 100
    fa_target_per_hour: float = 0.1
    threshold_points: int = 1001
    frame_spec: FrameSpec = field(default_factory=FrameSpec)


def _length_buckets(utts: Sequence[Utterance], batch_size: int) -> list[list[int]]:
    order = sorted(range(len(utts)), key=lambda i: (utts[i].num_frames, utts[i].utt_id))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _pad_batch(utts: Sequence[Utterance], idx: Sequence[int], dtype):
    t_max = max(utts[i].num_frames for i in idx)
    B = len(idx)
    x = np.zeros((t_max, B, utts[idx[0]].feats.shape[1]), dtype=dtype)
    labels = np.zeros((t_max, B), dtype=np.int8)
    weights = np.zeros((t_max, B), dtype=dtype)
    for b, i in enumerate(idx):
        u = utts[i]
        T = u.num_frames
        x[:T, b, :] = u.feats
        labels[:T, b] = u.labels
        weights[:T, b] = u.weights
    return x, labels, weights


def batch_probability_tracks(model, utts: Sequence[Utterance], batch_size: int) -> list[np.ndarray]:
    """Raw per-frame keyword probabilities for many utterances at once.

    Fast padded-batch path used for the per-epoch dev metric; final
    evaluation uses the per-frame streaming-equivalent path instead.
    """
    tracks: list[Optional[np.ndarray]] = [None] * len(utts)
    for idx in _length_buckets(utts, batch_size):
        x, _, _ = _pad_batch(utts, idx, model.dtype)
        logits, _, _ = model.forward_batch(x, keep_cache=False)
        m = logits.max(axis=-1, keepdims=True)
        e = np.exp(logits - m)
        probs = (e / e.sum(axis=-1, keepdims=True))[:, :, 1]
        for b, i in enumerate(idx):
            tracks[i] = probs[: utts[i].num_frames, b].astype(np.float64)
    return tracks


def dev_frr(
    tracks_by_utt: Sequence[tuple[Utterance, np.ndarray]],
    settings: EvalSettings,
) -> float:
    """FRR at the FA target given raw probability tracks for the dev set."""
    scores = []
    traces = []
    for utt, raw in tracks_by_utt:
        smoothed = smooth_track(raw, settings.smooth_frames)
        if utt.is_positive:
            scores.append(evaluation.UtteranceScore(utt.utt_id, float(smoothed.max())))
        else:
            hours = settings.frame_spec.frames_duration_s(len(smoothed)) / 3600.0
            traces.append(evaluation.NegativeTrace(utt.utt_id, smoothed, hours))
    if not scores or not traces:
        return float("nan")
    curve = evaluation.sweep_roc(
        scores,
        traces,
        evaluation.default_threshold_grid(settings.threshold_points),
        settings.lockout_frames,
    )
    return evaluation.frr_at_fa(curve, settings.fa_target_per_hour).frr


class _BestTracker:
    """Keep the parameter snapshot with the lowest dev FRR (earliest wins ties)."""

    def __init__(self):
        self.best_frr = math.inf
        self.values = None
        self.epoch = None

    def offer(self, frr: float, store: nn.ParamStore, epoch: int) -> None:
        if not math.isnan(frr) and frr < self.best_frr:
            self.best_frr = frr
            self.values = store.copy_values()
            self.epoch = epoch


def train_seq2seq(
    model: Seq2SeqModel,
    train_utts: Sequence[Utterance],
    dev_utts: Sequence[Utterance],
    cfg: TrainConfig,
    eval_settings: Optional[EvalSettings] = None,
) -> tuple[list[EpochMetrics], Optional[dict]]:
    """Frame-labeled training; returns (per-epoch metrics, best-dev params)."""
    eval_settings = eval_settings or EvalSettings()
    adam = nn.AdamState(model.params, lr=cfg.learning_rate)
    buckets = _length_buckets(train_utts, cfg.batch_size)
    shuffle_rng = nn.sub_seed(cfg.seed, "shuffle")
    best = _BestTracker()
    metrics = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(buckets))
        losses = []
        for bi in order:
            x, labels, weights = _pad_batch(train_utts, buckets[bi], model.dtype)
            logits, caches, h_top = model.forward_batch(x, keep_cache=True)
            loss, dlogits = nn.weighted_softmax_xent(logits, labels, weights)
            grads = model.backward_batch(caches, h_top, dlogits)
            loss = nn.apply_l2(loss, grads, model.params, cfg.l2_lambda)
            if not np.isfinite(loss):
                raise NumericError(f"training loss became {loss} at step {step}")
            nn.clip_global_norm(grads, cfg.clip_norm)
            adam.step(model.params, grads)
            losses.append(float(loss))
            step += 1
        dev_loss = _dev_loss_seq2seq(model, dev_utts, cfg)
        tracks = batch_probability_tracks(model, dev_utts, cfg.batch_size)
        frr = dev_frr(list(zip(dev_utts, tracks)), eval_settings)
        best.offer(frr, model.params, epoch)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                step=step,
                train_loss=float(np.mean(losses)) if losses else float("nan"),
                dev_loss=dev_loss,
                dev_frr_at_target=frr,
            )
        )
    return metrics, best.values


def _dev_loss_seq2seq(model, dev_utts, cfg: TrainConfig) -> float:
    if not dev_utts:
        return float("nan")
    total, weight = 0.0, 0.0
    for idx in _length_buckets(dev_utts, cfg.batch_size):
        x, labels, weights = _pad_batch(dev_utts, idx, model.dtype)
        logits, _, _ = model.forward_batch(x, keep_cache=False)
        loss, _ = nn.weighted_softmax_xent(logits, labels, weights)
        wsum = float(weights.sum())
        total += float(loss) * wsum
        weight += wsum
    return total / weight if weight > 0 else float("nan")


def _attention_window(utt: Utterance, train_len: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed-length window: centered on the keyword for positives, random
    elsewhere; short clips are left-padded with zero frames."""
    T = utt.num_frames
    if T <= train_len:
        pad = np.zeros((train_len - T, utt.feats.shape[1]), dtype=utt.feats.dtype)
        return np.concatenate([pad, utt.feats], axis=0)
    if utt.is_positive and utt.keyword_span is not None:
        center = (utt.keyword_span[0] + utt.keyword_span[1]) // 2
        start = int(np.clip(center - train_len // 2, 0, T - train_len))
    else:
        start = int(rng.integers(0, T - train_len + 1))
    return utt.feats[start : start + train_len]


def train_attention(
    model: AttentionModel,
    train_utts: Sequence[Utterance],
    dev_utts: Sequence[Utterance],
    cfg: TrainConfig,
    eval_settings: Optional[EvalSettings] = None,
) -> tuple[list[EpochMetrics], Optional[dict]]:
    """Window-level training for the attention model."""
    eval_settings = eval_settings or EvalSettings()
    adam = nn.AdamState(model.params, lr=cfg.learning_rate)
    shuffle_rng = nn.sub_seed(cfg.seed, "shuffle")
    crop_rng = nn.sub_seed(cfg.seed, "crop")
    best = _BestTracker()
    metrics = []
    step = 0
    n = len(train_utts)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            windows = [
                _attention_window(train_utts[i], model.train_len, crop_rng) for i in idx
            ]
            x = np.stack(windows, axis=1).astype(model.dtype)
            clip_labels = np.array([int(train_utts[i].is_positive) for i in idx], dtype=np.int8)
            weights = np.ones(len(idx), dtype=model.dtype)
            logits, cache = model.forward_batch(x, keep_cache=True)
            loss, dlogits = nn.weighted_softmax_xent(logits, clip_labels, weights)
            grads = model.backward_batch(cache, dlogits)
            loss = nn.apply_l2(loss, grads, model.params, cfg.l2_lambda)
            if not np.isfinite(loss):
                raise NumericError(f"training loss became {loss} at step {step}")
            nn.clip_global_norm(grads, cfg.clip_norm)
            adam.step(model.params, grads)
            losses.append(float(loss))
            step += 1
        dev_loss = _dev_loss_attention(model, dev_utts, cfg, crop_rng)
        tracks = [(u, model.forward(u.feats)) for u in dev_utts]
        frr = dev_frr(tracks, eval_settings)
        best.offer(frr, model.params, epoch)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                step=step,
                train_loss=float(np.mean(losses)) if losses else float("nan"),
                dev_loss=dev_loss,
                dev_frr_at_target=frr,
            )
        )
    return metrics, best.values


def _dev_loss_attention(model, dev_utts, cfg: TrainConfig, rng) -> float:
    if not dev_utts:
        return float("nan")
    total, count = 0.0, 0
    for lo in range(0, len(dev_utts), cfg.batch_size):
        chunk = dev_utts[lo : lo + cfg.batch_size]
        windows = [_attention_window(u, model.train_len, rng) for u in chunk]
        x = np.stack(windows, axis=1).astype(model.dtype)
        labels = np.array([int(u.is_positive) for u in chunk], dtype=np.int8)
        logits, _ = model.forward_batch(x, keep_cache=False)
        loss, _ = nn.weighted_softmax_xent(logits, labels, np.ones(len(chunk), dtype=model.dtype))
        total += float(loss) * len(chunk)
        count += len(chunk)
    return total / count if count else float("nan")


def train(
    model,
    train_utts: Sequence[Utterance],
    dev_utts: Sequence[Utterance],
    cfg: TrainConfig,
    eval_settings: Optional[EvalSettings] = None,
):
    """Dispatch on the model kind; see train_seq2seq / train_attention."""
    if isinstance(model, Seq2SeqModel):
        return train_seq2seq(model, train_utts, dev_utts, cfg, eval_settings)
    if isinstance(model, AttentionModel):
        return train_attention(model, train_utts, dev_utts, cfg, eval_settings)
    raise ValueError(f"cannot train model of type {type(model).__name__}")


def write_metrics_log(path, metrics: Sequence[EpochMetrics]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in metrics:
            fh.write(m.to_json() + "\n")
