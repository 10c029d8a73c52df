"""ROC evaluation: false-reject rate against false alarms per hour.

Positive clips are scored by the maximum of their smoothed probability
track; negative recordings are swept with the same trigger logic as
deployment, so the alarm counts reflect what a live system would do.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .streaming import smooth_track


@dataclass(frozen=True)
class UtteranceScore:
    utt_id: str
    score: float


@dataclass(frozen=True)
class NegativeTrace:
    utt_id: str
    yhat: np.ndarray
    duration_hours: float

    def __post_init__(self):
        if self.duration_hours <= 0:
            raise ValueError("negative trace must cover a positive duration")


@dataclass
class RocCurve:
    """Operating points ordered by ascending threshold."""

    thresholds: np.ndarray
    frr: np.ndarray
    fa_per_hour: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=np.float64)
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(np.diff(self.frr) < 0):
            raise ValueError("FRR must be non-decreasing in the threshold")
        if np.any(np.diff(self.fa_per_hour) > 0):
            raise ValueError("FA/hour must be non-increasing in the threshold")

    def __len__(self):
        return len(self.thresholds)


def score_positives(model, positives: Sequence[tuple[str, np.ndarray]], smooth_frames: int):
    """Max smoothed probability per positive clip, same smoothing as deployment."""
    if not positives:
        raise ValueError("no positive utterances to score")
    scores = []
    for utt_id, feats in positives:
        track = smooth_track(model.forward(feats), smooth_frames)
        scores.append(UtteranceScore(utt_id=utt_id, score=float(track.max())))
    return scores


def negative_trace(model, utt_id: str, feats: np.ndarray, smooth_frames: int,
                   duration_hours: float) -> NegativeTrace:
    track = smooth_track(model.forward(feats), smooth_frames)
    return NegativeTrace(utt_id=utt_id, yhat=track, duration_hours=duration_hours)


def count_triggers(track: np.ndarray, threshold: float, lockout_frames: int) -> int:
    """Events the trigger logic fires on a probability track.

    Walks the supra-threshold frames greedily: an event fires at the first
    unlocked frame at or above the threshold, then nothing can fire for
    the next lockout_frames frames. Equivalent to the per-frame decoder
    loop but O(events + supra-threshold frames).
    """
    above = np.flatnonzero(np.asarray(track) >= threshold)
    count = 0
    next_allowed = 0
    for idx in above:
        if idx >= next_allowed:
            count += 1
            next_allowed = idx + lockout_frames + 1
    return count


def count_false_alarms(trace: NegativeTrace, threshold: float, lockout_frames: int) -> int:
    if len(trace.yhat) == 0:
        raise ValueError("empty negative trace")
    return count_triggers(trace.yhat, threshold, lockout_frames)


def default_threshold_grid(points: int = 1001) -> np.ndarray:
    """Evenly spaced thresholds covering [0, 1]."""
    if points < 1:
        raise ValueError("need at least one threshold")
    return np.linspace(0.0, 1.0, points)


def sweep_roc(
    scores: Sequence[UtteranceScore],
    traces: Sequence[NegativeTrace],
    thresholds: Optional[np.ndarray] = None,
    lockout_frames: int = 100,
) -> RocCurve:
    """Operating points over a threshold grid.

    FRR(theta) is the fraction of positives scoring below theta; FA/hour
    is the pooled alarm count over the pooled negative hours.
    """
    if not scores:
        raise ValueError("need at least one positive score")
    if not traces:
        raise ValueError("need at least one negative trace")
    total_hours = sum(t.duration_hours for t in traces)
    if total_hours <= 0:
        raise ValueError("total negative duration must be positive")
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    sorted_scores = np.sort(np.array([s.score for s in scores]))
    n_pos = len(sorted_scores)
    # positives with score < theta are misses
    frr = np.searchsorted(sorted_scores, thresholds, side="left") / n_pos
    fa = np.empty(len(thresholds))
    for i, theta in enumerate(thresholds):
        fa[i] = sum(count_triggers(t.yhat, theta, lockout_frames) for t in traces)
    return RocCurve(thresholds=thresholds, frr=frr, fa_per_hour=fa / total_hours)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    frr: float
    fa_per_hour: float
    meets_target: bool


def frr_at_fa(curve: RocCurve, target_fa_per_hour: float = 0.1) -> OperatingPoint:
    """FRR at the smallest threshold whose FA/hour is within the target.

    No interpolation: the reported FRR is achievable at an actual grid
    threshold. When even the largest threshold exceeds the target, that
    point is returned with meets_target False.
    """
    ok = np.flatnonzero(curve.fa_per_hour <= target_fa_per_hour)
    if len(ok) == 0:
        i = len(curve) - 1
        return OperatingPoint(
            threshold=float(curve.thresholds[i]),
            frr=float(curve.frr[i]),
            fa_per_hour=float(curve.fa_per_hour[i]),
            meets_target=False,
        )
    i = int(ok[0])
    return OperatingPoint(
        threshold=float(curve.thresholds[i]),
        frr=float(curve.frr[i]),
        fa_per_hour=float(curve.fa_per_hour[i]),
        meets_target=True,
    )


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    frr: float
    params_k: float
    meets_target: bool


def compare_models(
    entries: Sequence[tuple[str, object]],
    positives: Sequence[tuple[str, np.ndarray]],
    negatives: Sequence[tuple[str, np.ndarray, float]],
    smooth_frames: int,
    thresholds: Optional[np.ndarray] = None,
    lockout_frames: int = 100,
    target_fa_per_hour: float = 0.1,
) -> list[ComparisonRow]:
    """Evaluate several models on one eval set; one row per model."""
    from .models import param_count, params_k

    rows = []
    for label, model in entries:
        scores = score_positives(model, positives, smooth_frames)
        traces = [
            negative_trace(model, utt_id, feats, smooth_frames, hours)
            for utt_id, feats, hours in negatives
        ]
        curve = sweep_roc(scores, traces, thresholds, lockout_frames)
        point = frr_at_fa(curve, target_fa_per_hour)
        rows.append(
            ComparisonRow(
                model=label,
                frr=point.frr,
                params_k=params_k(param_count(model)),
                meets_target=point.meets_target,
            )
        )
    return rows


def format_comparison_table(rows: Sequence[ComparisonRow], target_fa_per_hour: float = 0.1) -> str:
    """Aligned plain-text table of FRR and size per model."""
    header = ("Model", f"FRR(%) @ {target_fa_per_hour} FA/hr", "Params(K)")
    cells = [header] + [
        (r.model, f"{100.0 * r.frr:.2f}" + ("" if r.meets_target else " *"), f"{r.params_k:.1f}")
        for r in rows
    ]
    widths = [max(len(row[c]) for row in cells) for c in range(3)]
    lines = ["  ".join(row[c].ljust(widths[c]) for c in range(3)).rstrip() for row in cells]
    if any(not r.meets_target for r in rows):
        lines.append("* no threshold met the false-alarm target; largest-threshold point shown")
    return "\n".join(lines)


def write_comparison_tsv(path, rows: Sequence[ComparisonRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model\tfrr\tparams_k\tmeets_fa_target\n")
        for r in rows:
            fh.write(f"{r.model}\t{r.frr:.9g}\t{r.params_k:.1f}\t{int(r.meets_target)}\n")


def write_roc_tsv(path, curve: RocCurve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold\tfrr\tfa_per_hour\n")
        for t, fr, fa in zip(curve.thresholds, curve.frr, curve.fa_per_hour):
            fh.write(f"{t:.9g}\t{fr:.9g}\t{fa:.9g}\n")


def read_roc_tsv(path) -> RocCurve:
    thresholds, frr, fa = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            a, b, c = line.rstrip("\n").split("\t")
            thresholds.append(float(a))
            frr.append(float(b))
            fa.append(float(c))
    return RocCurve(np.array(thresholds), np.array(frr), np.array(fa))
