"""Synthetic tone corpus for desk-scale training and the test suite.

The "keyword" is a fixed sequence of four tones; distractors are other
tones, shuffled keyword orders, and near-miss prefixes. Everything is
generated from one seed: audio, alignments, and train/dev/test manifests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import features as feat
from .data import ManifestEntry, write_manifest
from .labeling import AlignedToken, Alignment, KeywordSpec, write_alignment_file

KEYWORD_UNITS = ("kw1", "kw2", "kw3", "kw4")
KEYWORD_FREQS = (630.0, 1020.0, 1490.0, 2150.0)
DISTRACTOR_FREQS = (420.0, 780.0, 1230.0, 1780.0, 2600.0, 3300.0)
NOISE_RMS = 0.006
TONE_AMPLITUDE = 0.28


@dataclass(frozen=True)
class CorpusPaths:
    root: Path
    wav_dir: Path
    alignment_file: Path
    manifests: dict[str, Path]  # split name -> manifest path
    keyword: KeywordSpec
    frontend: feat.FrontendConfig


def _tone(rng, freq_hz: float, duration_s: float, rate: int) -> np.ndarray:
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    jitter = 1.0 + rng.uniform(-0.02, 0.02)
    amp = TONE_AMPLITUDE * (1.0 + rng.uniform(-0.25, 0.25))
    x = amp * np.sin(2.0 * np.pi * freq_hz * jitter * t + rng.uniform(0, 2 * np.pi))
    ramp = min(int(0.010 * rate), n // 2)
    if ramp > 0:
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[-ramp:] = env[:ramp][::-1]
        x *= env
    return x


def _silence(rng, duration_s: float, rate: int) -> np.ndarray:
    return np.zeros(int(round(duration_s * rate)))


def _distractor_segments(rng, count: int) -> list[tuple[str, float]]:
    """(symbol, freq) pairs mixing plain distractors with keyword-unit tones."""
    segs = []
    for _ in range(count):
        if rng.random() < 0.3:
            k = int(rng.integers(len(KEYWORD_UNITS)))
            segs.append((KEYWORD_UNITS[k], KEYWORD_FREQS[k]))
        else:
            d = int(rng.integers(len(DISTRACTOR_FREQS)))
            segs.append((f"d{d}", DISTRACTOR_FREQS[d]))
    return segs


def _negative_plan(rng) -> list[tuple[str, float]]:
    """A token plan guaranteed not to spell the keyword contiguously."""
    style = rng.random()
    if style < 0.35:
        # near miss: keyword prefix then a wrong final tone
        cut = int(rng.integers(1, 4))
        plan = [(KEYWORD_UNITS[i], KEYWORD_FREQS[i]) for i in range(cut)]
        d = int(rng.integers(len(DISTRACTOR_FREQS)))
        plan.append((f"d{d}", DISTRACTOR_FREQS[d]))
        plan.extend(_distractor_segments(rng, int(rng.integers(0, 3))))
    elif style < 0.55:
        # keyword tones out of order
        order = rng.permutation(4)
        while list(order) == [0, 1, 2, 3]:
            order = rng.permutation(4)
        plan = [(KEYWORD_UNITS[i], KEYWORD_FREQS[i]) for i in order]
    else:
        plan = _distractor_segments(rng, int(rng.integers(3, 7)))
    return _strip_keyword_runs(plan)


def _strip_keyword_runs(plan: list[tuple[str, float]]) -> list[tuple[str, float]]:
    """Break any accidental contiguous keyword spelling with a distractor."""
    symbols = [s for s, _ in plan]
    k = len(KEYWORD_UNITS)
    i = 0
    while i + k <= len(symbols):
        if tuple(symbols[i : i + k]) == KEYWORD_UNITS:
            plan[i + k - 1] = ("d0", DISTRACTOR_FREQS[0])
            symbols[i + k - 1] = "d0"
        i += 1
    return plan


def _render_clip(rng, plan: list[tuple[str, float]], rate: int, frame_spec: feat.FrameSpec):
    """Render tones separated by silence; returns (samples, tokens)."""
    hop = frame_spec.shift_samples(rate)
    pieces = [_silence(rng, rng.uniform(0.10, 0.25), rate)]
    spans = []
    cursor = len(pieces[0])
    for symbol, freq in plan:
        tone = _tone(rng, freq, rng.uniform(0.12, 0.18), rate)
        spans.append((symbol, cursor, cursor + len(tone)))
        pieces.append(tone)
        cursor += len(tone)
        gap = _silence(rng, rng.uniform(0.03, 0.10), rate)
        pieces.append(gap)
        cursor += len(gap)
    pieces.append(_silence(rng, rng.uniform(0.10, 0.30), rate))
    samples = np.concatenate(pieces)
    samples = samples + rng.normal(0.0, NOISE_RMS, size=len(samples))
    n_frames = frame_spec.frame_count(len(samples), rate)
    tokens = []
    for symbol, s0, s1 in spans:
        start = min(s0 // hop, n_frames - 1)
        end = min(max(s1 // hop, start + 1), n_frames)
        tokens.append(AlignedToken(symbol, start, end))
    return samples, tokens


def make_corpus(
    root,
    n_positive: int = 200,
    n_negative: int = 400,
    seed: int = 7,
    frontend: feat.FrontendConfig | None = None,
    splits: tuple[float, float] = (0.7, 0.15),  # train, dev; remainder is test
) -> CorpusPaths:
    """Generate WAVs, an alignment file, and split manifests under root."""
    frontend = frontend or feat.FrontendConfig()
    rate = frontend.sample_rate_hz
    root = Path(root)
    wav_dir = root / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    entries = []
    alignments = {}
    for i in range(n_positive + n_negative):
        positive = i < n_positive
        utt_id = f"{'pos' if positive else 'neg'}{i if positive else i - n_positive:04d}"
        if positive:
            plan = _distractor_segments(rng, int(rng.integers(0, 3)))
            plan += [(u, f) for u, f in zip(KEYWORD_UNITS, KEYWORD_FREQS)]
            plan += _distractor_segments(rng, int(rng.integers(0, 2)))
            plan = _fix_positive_plan(plan)
        else:
            plan = _negative_plan(rng)
        samples, tokens = _render_clip(rng, plan, rate, frontend.frame_spec)
        wav_path = wav_dir / f"{utt_id}.wav"
        feat.write_wav(wav_path, feat.Waveform(samples=samples, sample_rate_hz=rate))
        alignments[utt_id] = Alignment(tokens=tuple(tokens))
        entries.append(
            ManifestEntry(
                utt_id=utt_id, wav_path=wav_path, alignment_id=utt_id, is_positive=positive
            )
        )

    alignment_file = root / "alignments.txt"
    write_alignment_file(alignment_file, alignments)

    order = rng.permutation(len(entries))
    n_train = int(round(splits[0] * len(entries)))
    n_dev = int(round(splits[1] * len(entries)))
    split_ids = {
        "train": order[:n_train],
        "dev": order[n_train : n_train + n_dev],
        "test": order[n_train + n_dev :],
    }
    manifests = {}
    for name, idx in split_ids.items():
        path = root / f"{name}.tsv"
        write_manifest(path, [entries[j] for j in sorted(idx)])
        manifests[name] = path
    return CorpusPaths(
        root=root,
        wav_dir=wav_dir,
        alignment_file=alignment_file,
        manifests=manifests,
        keyword=KeywordSpec(units=KEYWORD_UNITS),
        frontend=frontend,
    )


def _fix_positive_plan(plan: list[tuple[str, float]]) -> list[tuple[str, float]]:
    """Keep exactly the intended keyword run in a positive clip's plan.

    Lead-in/tail distractors may themselves be keyword-unit tones; make
    sure they cannot extend or duplicate a contiguous keyword spelling.
    """
    symbols = [s for s, _ in plan]
    k = len(KEYWORD_UNITS)
    runs = [
        i for i in range(len(symbols) - k + 1) if tuple(symbols[i : i + k]) == KEYWORD_UNITS
    ]
    for i in runs[1:]:
        plan[i + k - 1] = ("d1", DISTRACTOR_FREQS[1])
        symbols[i + k - 1] = "d1"
    return plan


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="generate a synthetic tone corpus")
    parser.add_argument("out_dir")
    parser.add_argument("--positives", type=int, default=200)
    parser.add_argument("--negatives", type=int, default=400)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    paths = make_corpus(args.out_dir, args.positives, args.negatives, args.seed)
    print(f"corpus written under {paths.root}")
    print(f"keyword units: {','.join(paths.keyword.units)}")
    for name, path in paths.manifests.items():
        print(f"{name} manifest: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
