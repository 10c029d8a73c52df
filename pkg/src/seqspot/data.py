"""Dataset manifests, the feature cache convention, and utterance loading."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import features as feat
from .errors import DataError
from .labeling import Alignment, KeywordSpec, find_keyword_occurrences, labels_from_alignment

MANIFEST_HEADER = "utt_id\twav_path\talignment_id\tis_positive"


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    wav_path: Path
    alignment_id: Optional[str]  # None when the column holds "-"
    is_positive: bool


def read_manifest(path) -> list[ManifestEntry]:
    """Parse the 4-column TSV manifest; wav paths resolve relative to it."""
    base = Path(path).parent
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#") or line == MANIFEST_HEADER:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns")
            utt_id, wav_path, align_id, pos = fields
            if not utt_id:
                raise DataError(f"{path}:{lineno}: empty utterance id")
            if utt_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            if pos not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: is_positive must be 0 or 1, got {pos!r}")
            wav = Path(wav_path)
            if not wav.is_absolute():
                wav = base / wav
            entries.append(
                ManifestEntry(
                    utt_id=utt_id,
                    wav_path=wav,
                    alignment_id=None if align_id == "-" else align_id,
                    is_positive=pos == "1",
                )
            )
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for e in entries:
            try:
                wav = e.wav_path.relative_to(base)
            except ValueError:
                wav = e.wav_path
            align = e.alignment_id if e.alignment_id is not None else "-"
            fh.write(f"{e.utt_id}\t{wav}\t{align}\t{int(e.is_positive)}\n")


def cache_path(cache_dir, utt_id: str) -> Path:
    return Path(cache_dir) / f"{utt_id}.kwsf"


def _source_signature(wav_path: Path, cfg: feat.FrontendConfig) -> str:
    h = hashlib.sha256()
    h.update(wav_path.read_bytes())
    h.update(cfg.digest().encode())
    return h.hexdigest()


def featurize_entry(entry: ManifestEntry, cfg: feat.FrontendConfig, cache_dir) -> bool:
    """Compute and cache one utterance's features; returns True if written.

    A sidecar records a hash of the source audio and the front-end
    settings, so unchanged inputs are skipped on re-runs.
    """
    out = cache_path(cache_dir, entry.utt_id)
    sig_path = Path(str(out) + ".src")
    signature = _source_signature(entry.wav_path, cfg)
    if out.exists() and sig_path.exists() and sig_path.read_text() == signature:
        return False
    wave_in = feat.read_wav(entry.wav_path)
    matrix = feat.featurize_waveform(wave_in, cfg)
    feat.write_features(out, matrix)
    sig_path.write_text(signature)
    return True


@dataclass
class Utterance:
    """One loaded example: features plus per-frame targets."""

    utt_id: str
    feats: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    is_positive: bool
    keyword_span: Optional[tuple[int, int]]  # (first unit start, last unit end) frames

    @property
    def num_frames(self) -> int:
        return self.feats.shape[0]


def load_utterances(
    entries: list[ManifestEntry],
    cache_dir,
    alignments: dict[str, Alignment],
    keyword: KeywordSpec,
    hold_frames: Optional[int] = None,
) -> list[Utterance]:
    """Join cached features with alignment-derived labels.

    Negatives (or entries without an alignment) get all-zero labels with
    full weight. Missing cache files or alignment ids are data errors.
    """
    utts = []
    for entry in entries:
        path = cache_path(cache_dir, entry.utt_id)
        if not path.exists():
            raise DataError(f"no cached features for {entry.utt_id!r}; run featurize first")
        feats = feat.read_features(path)
        T = feats.shape[0]
        span = None
        if entry.alignment_id is not None:
            if entry.alignment_id not in alignments:
                raise DataError(f"alignment id {entry.alignment_id!r} not found for {entry.utt_id!r}")
            align = alignments[entry.alignment_id]
            ls = labels_from_alignment(align, keyword, T, hold_frames)
            labels, weights = ls.labels, ls.weights
            occs = find_keyword_occurrences(align, keyword)
            if occs:
                span = (occs[0][0].start_frame, occs[0][-1].end_frame)
            elif entry.is_positive:
                raise DataError(f"{entry.utt_id!r} is marked positive but its alignment has no keyword")
        else:
            if entry.is_positive:
                raise DataError(f"{entry.utt_id!r} is marked positive but has no alignment")
            labels = np.zeros(T, dtype=np.int8)
            weights = np.ones(T, dtype=np.float32)
        utts.append(
            Utterance(
                utt_id=entry.utt_id,
                feats=feats,
                labels=labels,
                weights=weights,
                is_positive=entry.is_positive,
                keyword_span=span,
            )
        )
    return utts
