"""Frame-level training targets from token time alignments.

Positive utterances get per-frame labels: 1 once the whole keyword has been
heard, -1 over the ambiguous half of the final keyword unit (those frames
are excluded from the loss by a zero weight), 0 everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class AlignedToken:
    symbol: str
    start_frame: int
    end_frame: int  # exclusive

    def __post_init__(self):
        if not self.symbol:
            raise ValueError("token symbol must be nonempty")
        if self.start_frame < 0 or self.start_frame >= self.end_frame:
            raise ValueError(f"bad token span [{self.start_frame}, {self.end_frame})")


@dataclass(frozen=True)
class Alignment:
    """Non-overlapping tokens sorted by start frame."""

    tokens: tuple[AlignedToken, ...]

    def __post_init__(self):
        for prev, cur in zip(self.tokens, self.tokens[1:]):
            if cur.start_frame < prev.end_frame:
                raise ValueError(
                    f"tokens overlap or are unsorted at frame {cur.start_frame}"
                )


@dataclass(frozen=True)
class KeywordSpec:
    """The keyword as an ordered tuple of subword unit symbols."""

    units: tuple[str, ...]

    def __post_init__(self):
        if len(self.units) < 1:
            raise ValueError("keyword needs at least one unit")
        if any(not u for u in self.units):
            raise ValueError("keyword unit symbols must be nonempty")


@dataclass
class LabelSequence:
    """Per-frame targets in {0, 1, -1} and their loss weights in {0, 1}.

    scopes lists the (onset, end) frame ranges claimed by keyword
    occurrences; inside a scope the labels must never fall from 1 back to 0.
    When scopes is None the whole sequence counts as one scope.
    """

    labels: np.ndarray
    weights: np.ndarray
    scopes: Optional[tuple[tuple[int, int], ...]] = None


@dataclass(frozen=True)
class LabelViolation:
    index: int
    reason: str


def find_keyword_occurrences(align: Alignment, kw: KeywordSpec) -> list[tuple[AlignedToken, ...]]:
    """Runs of consecutive tokens whose symbols spell the keyword in order.

    Matches may not share tokens; any intervening token (silence, filler)
    breaks a match.
    """
    tokens = align.tokens
    k = len(kw.units)
    occurrences = []
    i = 0
    while i + k <= len(tokens):
        if all(tokens[i + j].symbol == kw.units[j] for j in range(k)):
            occurrences.append(tuple(tokens[i : i + k]))
            i += k
        else:
            i += 1
    return occurrences


def labels_from_alignment(
    align: Alignment,
    kw: KeywordSpec,
    num_frames: int,
    hold_frames: Optional[int] = None,
) -> LabelSequence:
    """Build the {0, 1, -1} target sequence for one utterance.

    For each keyword occurrence with final unit spanning [s, e): frames
    [mid, e) are -1 where mid = (s + e) // 2, and frames from e up to the
    occurrence's scope end are 1. The scope runs to the end of the clip
    unless hold_frames limits it. A frame that already includes a complete
    earlier occurrence stays 1 even inside a later occurrence's -1 band.
    """
    if align.tokens and align.tokens[-1].end_frame > num_frames:
        raise DataError(
            f"alignment extends to frame {align.tokens[-1].end_frame} "
            f"but the utterance has only {num_frames} frames"
        )
    labels = np.zeros(num_frames, dtype=np.int8)
    occurrences = find_keyword_occurrences(align, kw)
    scopes = []
    for occ in occurrences:
        final = occ[-1]
        mid = (final.start_frame + final.end_frame) // 2
        labels[mid : final.end_frame] = -1
        scopes.append(occ)
    for occ in scopes:
        final = occ[-1]
        end = num_frames if hold_frames is None else min(num_frames, final.end_frame + hold_frames)
        labels[final.end_frame : end] = 1
    weights = (labels != -1).astype(np.float32)
    scope_ranges = tuple(
        (
            occ[0].start_frame,
            num_frames if hold_frames is None else min(num_frames, occ[-1].end_frame + hold_frames),
        )
        for occ in scopes
    )
    return LabelSequence(labels=labels, weights=weights, scopes=scope_ranges or None)


def validate_label_sequence(ls: LabelSequence) -> Optional[LabelViolation]:
    """Check the LabelSequence invariants; None means OK.

    Rule 1: weight is 0 exactly on -1 frames. Rule 2: within each scope,
    labels never transition 1 -> 0.
    """
    labels = np.asarray(ls.labels)
    weights = np.asarray(ls.weights)
    for t in range(len(labels)):
        want = 0.0 if labels[t] == -1 else 1.0
        if weights[t] != want:
            return LabelViolation(t, f"weight {weights[t]} for label {labels[t]}")
    scopes = ls.scopes if ls.scopes is not None else ((0, len(labels)),)
    for start, end in scopes:
        for t in range(max(start, 0) + 1, min(end, len(labels))):
            if labels[t] == 0 and labels[t - 1] == 1:
                return LabelViolation(t, "label fell from 1 to 0 inside an occurrence scope")
    return None


def parse_alignment_file(path) -> dict[str, Alignment]:
    """Parse the one-token-per-line alignment format.

    Utterances start with a `#utt <id>` line; each following line is
    `symbol<TAB>start_frame<TAB>end_frame` until the next header.
    """
    out: dict[str, Alignment] = {}
    current_id = None
    current_tokens: list[AlignedToken] = []

    def flush():
        if current_id is not None:
            if current_id in out:
                raise DataError(f"{path}: duplicate utterance id {current_id!r}")
            out[current_id] = Alignment(tokens=tuple(current_tokens))

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#utt"):
                flush()
                parts = line.split(None, 1)
                if len(parts) != 2 or not parts[1].strip():
                    raise DataError(f"{path}:{lineno}: malformed utterance header {line!r}")
                current_id = parts[1].strip()
                current_tokens = []
                continue
            if current_id is None:
                raise DataError(f"{path}:{lineno}: token line before any '#utt' header")
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                token = AlignedToken(fields[0], int(fields[1]), int(fields[2]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            current_tokens.append(token)
    flush()
    return out


def write_alignment_file(path, alignments: dict[str, Alignment]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, align in alignments.items():
            fh.write(f"#utt {utt_id}\n")
            for tok in align.tokens:
                fh.write(f"{tok.symbol}\t{tok.start_frame}\t{tok.end_frame}\n")


def write_labels_tsv(path, ls: LabelSequence) -> None:
    """Export per-frame labels and weights as a TSV with a header row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame\tlabel\tweight\n")
        for t in range(len(ls.labels)):
            fh.write(f"{t}\t{int(ls.labels[t])}\t{ls.weights[t]:.1f}\n")
