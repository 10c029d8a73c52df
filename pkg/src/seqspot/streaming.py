"""Frame-synchronous inference: state carry, probability smoothing, triggers.

The decoder owns one stream's mutable state: the model's recurrent state,
a ring buffer of the last n raw probabilities, and a refractory counter so
a sustained detection produces exactly one event.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .features import FrontendConfig, StreamingFeaturizer

DEFAULT_SMOOTH_FRAMES = 12
DEFAULT_THRESHOLD = 0.5
DEFAULT_LOCKOUT_FRAMES = 100


@dataclass(frozen=True)
class TriggerEvent:
    frame_index: int
    smoothed_probability: float


class StreamingDecoder:
    """Per-stream detector state; one instance per audio stream."""

    def __init__(
        self,
        model,
        smooth_frames: int = DEFAULT_SMOOTH_FRAMES,
        threshold: float = DEFAULT_THRESHOLD,
        lockout_frames: int = DEFAULT_LOCKOUT_FRAMES,
    ):
        if smooth_frames < 1:
            raise ValueError("smoothing window must be at least one frame")
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if lockout_frames < 0:
            raise ValueError("lockout must be non-negative")
        self.model = model
        self.smooth_frames = smooth_frames
        self.threshold = threshold
        self.lockout_frames = lockout_frames
        self.reset()

    def reset(self) -> None:
        """Back to a fresh stream: zero RNN state, empty buffer, counters cleared."""
        self._state = self.model.init_state()
        self._recent = deque(maxlen=self.smooth_frames)
        self.frames_seen = 0
        self.lockout_remaining = 0
        self.last_raw = None

    def push_frame(self, x_row: np.ndarray):
        """Consume one feature row; returns (smoothed probability, event or None).

        The smoothed value averages the last n raw probabilities (fewer
        during warm-up). An event fires when it reaches the threshold and
        the lockout has expired, which re-arms the lockout.
        """
        self._state, raw = self.model.step(self._state, x_row)
        self.last_raw = raw
        self._recent.append(raw)
        smoothed = sum(self._recent) / len(self._recent)
        self.frames_seen += 1
        event = None
        if self.lockout_remaining > 0:
            self.lockout_remaining -= 1
        elif smoothed >= self.threshold:
            event = TriggerEvent(frame_index=self.frames_seen - 1, smoothed_probability=smoothed)
            self.lockout_remaining = self.lockout_frames
        return smoothed, event


def run_stream(
    model,
    features: np.ndarray,
    smooth_frames: int = DEFAULT_SMOOTH_FRAMES,
    threshold: float = DEFAULT_THRESHOLD,
    lockout_frames: int = DEFAULT_LOCKOUT_FRAMES,
):
    """Batch driver over push_frame; returns (events, smoothed track, raw track)."""
    decoder = StreamingDecoder(model, smooth_frames, threshold, lockout_frames)
    events = []
    smoothed = np.empty(features.shape[0], dtype=np.float64)
    raw = np.empty(features.shape[0], dtype=np.float64)
    for t in range(features.shape[0]):
        smoothed[t], event = decoder.push_frame(features[t])
        raw[t] = decoder.last_raw
        if event is not None:
            events.append(event)
    return events, smoothed, raw


def smooth_track(raw: np.ndarray, smooth_frames: int) -> np.ndarray:
    """Running mean of the last n raw values, shorter windows during warm-up.

    Matches the decoder's arithmetic: a plain sequential sum over the
    window divided by its length.
    """
    out = np.empty(len(raw), dtype=np.float64)
    for t in range(len(raw)):
        lo = max(0, t - smooth_frames + 1)
        window = raw[lo : t + 1]
        out[t] = sum(float(v) for v in window) / len(window)
    return out


class StreamingPipeline:
    """Causal audio-to-events chain: PCM samples in, trigger events out.

    Owns a StreamingFeaturizer (with its PCEN smoother state) and a
    StreamingDecoder, so the whole path is causal end to end.
    """

    def __init__(
        self,
        model,
        frontend: FrontendConfig,
        smooth_frames: int = DEFAULT_SMOOTH_FRAMES,
        threshold: float = DEFAULT_THRESHOLD,
        lockout_frames: int = DEFAULT_LOCKOUT_FRAMES,
    ):
        self.frontend = frontend
        self.featurizer = StreamingFeaturizer(frontend)
        self.decoder = StreamingDecoder(model, smooth_frames, threshold, lockout_frames)

    def reset(self) -> None:
        self.featurizer.reset()
        self.decoder.reset()

    def push_samples(self, samples: np.ndarray):
        """Feed raw samples; yields (frame_index, smoothed prob, event or None)."""
        rows = self.featurizer.push_samples(samples)
        results = []
        for row in rows:
            smoothed, event = self.decoder.push_frame(row)
            results.append((self.decoder.frames_seen - 1, smoothed, event))
        return results
