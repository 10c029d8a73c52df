"""Audio front-end: framing, mel filterbank energies, and PCEN normalization.

The pipeline is raw 16-bit PCM -> 25 ms / 10 ms frames -> 40 mel-band
energies -> per-channel energy normalization. Everything is causal so the
same math can run on a live stream (see StreamingFeaturizer).
"""

from __future__ import annotations

import hashlib
import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

FEATURE_DIM = 40
KWSF_MAGIC = b"KWSF"


@dataclass(frozen=True)
class FrameSpec:
    """Analysis window length and hop, in milliseconds."""

    window_ms: float = 25.0
    shift_ms: float = 10.0

    def __post_init__(self):
        if self.window_ms <= 0 or self.shift_ms <= 0:
            raise ValueError("frame window and shift must be positive")
        if self.shift_ms > self.window_ms:
            raise ValueError("frame shift must not exceed window length")

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(sample_rate_hz * self.window_ms / 1000.0))

    def shift_samples(self, sample_rate_hz: int) -> int:
        return int(round(sample_rate_hz * self.shift_ms / 1000.0))

    def frame_count(self, num_samples: int, sample_rate_hz: int) -> int:
        """Number of full windows in a signal; 0 if shorter than one window."""
        win = self.window_samples(sample_rate_hz)
        hop = self.shift_samples(sample_rate_hz)
        if num_samples < win:
            return 0
        return (num_samples - win) // hop + 1

    def frames_duration_s(self, num_frames: int) -> float:
        """Audio span covered by num_frames consecutive windows, in seconds."""
        if num_frames <= 0:
            return 0.0
        return ((num_frames - 1) * self.shift_ms + self.window_ms) / 1000.0


@dataclass(frozen=True)
class PcenConfig:
    """Per-channel energy normalization parameters.

    smoothing is the IIR coefficient of the causal energy tracker, gain the
    AGC exponent, bias/root the compression pair, floor the stabilizer.
    """

    smoothing: float = 0.025
    gain: float = 0.98
    bias: float = 2.0
    root: float = 0.5
    floor: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.smoothing <= 1.0:
            raise ValueError("pcen smoothing must be in (0, 1]")
        if not 0.0 < self.gain <= 1.0:
            raise ValueError("pcen gain must be in (0, 1]")
        if self.bias <= 0.0:
            raise ValueError("pcen bias must be positive")
        if not 0.0 < self.root <= 1.0:
            raise ValueError("pcen root must be in (0, 1]")
        if self.floor <= 0.0:
            raise ValueError("pcen floor must be positive")


@dataclass(frozen=True)
class FrontendConfig:
    """Everything needed to turn audio into the T x 40 feature matrix."""

    sample_rate_hz: int = 16000
    frame_spec: FrameSpec = field(default_factory=FrameSpec)
    n_fft: int = 512
    n_mels: int = FEATURE_DIM
    fmin_hz: float = 20.0
    fmax_hz: float = 8000.0
    pcen: PcenConfig = field(default_factory=PcenConfig)

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if self.n_fft < self.frame_spec.window_samples(self.sample_rate_hz):
            raise ValueError("FFT size must be at least the window length")
        if not 0 <= self.fmin_hz < self.fmax_hz:
            raise ValueError("need 0 <= fmin < fmax")
        if self.fmax_hz > self.sample_rate_hz / 2:
            raise ValueError("fmax exceeds Nyquist")

    def digest(self) -> str:
        """Stable short hash of the settings, used for cache invalidation."""
        text = "|".join(
            repr(v)
            for v in (
                self.sample_rate_hz,
                self.frame_spec.window_ms,
                self.frame_spec.shift_ms,
                self.n_fft,
                self.n_mels,
                self.fmin_hz,
                self.fmax_hz,
                self.pcen.smoothing,
                self.pcen.gain,
                self.pcen.bias,
                self.pcen.root,
                self.pcen.floor,
            )
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


def read_wav(path) -> Waveform:
    """Read a PCM 16-bit mono WAV file.

    Anything else (stereo, other sample widths, compressed encodings) is
    rejected with a DataError naming the offending property.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            comptype = wf.getcomptype()
            rate = wf.getframerate()
            n = wf.getnframes()
            if comptype != "NONE":
                raise DataError(f"{path}: compressed WAV ({comptype}) not supported, need PCM")
            if sampwidth != 2:
                raise DataError(f"{path}: {8 * sampwidth}-bit samples not supported, need 16-bit PCM")
            if n_channels != 1:
                raise DataError(f"{path}: {n_channels} channels not supported, need mono")
            raw = wf.readframes(n)
    except wave.Error as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate_hz=rate)


def write_wav(path, wave_out: Waveform) -> None:
    """Write a Waveform as PCM 16-bit mono, clipping to [-1, 1)."""
    pcm = np.clip(wave_out.samples, -1.0, 32767.0 / 32768.0)
    data = (pcm * 32768.0).astype("<i2").tobytes()
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(wave_out.sample_rate_hz)
        wf.writeframes(data)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (the DFT-friendly variant)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def frame_signal(wave_in: Waveform, spec: FrameSpec) -> np.ndarray:
    """Slice audio into overlapping Hann-tapered frames.

    Frame t covers samples [t*hop, t*hop + window). Raises on audio shorter
    than one window.
    """
    win = spec.window_samples(wave_in.sample_rate_hz)
    hop = spec.shift_samples(wave_in.sample_rate_hz)
    n = len(wave_in.samples)
    if n < win:
        raise ValueError(f"audio has {n} samples, shorter than one {win}-sample window")
    count = (n - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(count)[:, None]
    return wave_in.samples[idx] * hann_window(win)[None, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_filters: int,
    n_fft: int,
    sample_rate_hz: int,
    fmin_hz: float,
    fmax_hz: float,
) -> np.ndarray:
    """Triangular mel filters evaluated at the rFFT bin frequencies.

    Returns an (n_filters, n_fft//2 + 1) matrix of non-negative weights.
    Adjacent filters overlap: each triangle's peak sits at its neighbours'
    edges, tiling [fmin, fmax].
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_filters + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate_hz / n_fft)
    fbank = np.zeros((n_filters, len(bin_freqs)))
    for i in range(n_filters):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        fbank[i] = np.maximum(0.0, np.minimum(up, down))
    return fbank


def mel_energies(frames: np.ndarray, fbank: np.ndarray, n_fft: int) -> np.ndarray:
    """Per-frame mel band energies: fbank applied to the FFT power spectrum."""
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("frames must be a nonempty 2-D array")
    if n_fft < frames.shape[1]:
        raise ValueError("FFT size smaller than frame length")
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    return power @ fbank.T


def pcen(mel: np.ndarray, cfg: PcenConfig) -> np.ndarray:
    """Per-channel energy normalization over a T x F energy matrix.

    The smoother M is a first-order IIR over time, seeded with the first
    row so a stream does not start with a large transient. Output row t
    depends only on rows <= t.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] == 0:
        raise ValueError("mel must be a nonempty 2-D array")
    if np.any(mel < 0):
        raise ValueError("mel energies must be non-negative")
    out = np.empty_like(mel)
    m = mel[0].copy()
    for t in range(mel.shape[0]):
        if t > 0:
            m = (1.0 - cfg.smoothing) * m + cfg.smoothing * mel[t]
        out[t] = _pcen_row(mel[t], m, cfg)
    return out


def _pcen_row(e: np.ndarray, m: np.ndarray, cfg: PcenConfig) -> np.ndarray:
    agc = e / (cfg.floor + m) ** cfg.gain
    return (agc + cfg.bias) ** cfg.root - cfg.bias**cfg.root


def featurize_waveform(wave_in: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Full front-end: audio in, T x 40 float32 feature matrix out."""
    if wave_in.sample_rate_hz != cfg.sample_rate_hz:
        raise DataError(
            f"sample rate {wave_in.sample_rate_hz} Hz does not match the "
            f"configured {cfg.sample_rate_hz} Hz"
        )
    frames = frame_signal(wave_in, cfg.frame_spec)
    fbank = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate_hz, cfg.fmin_hz, cfg.fmax_hz)
    mel = mel_energies(frames, fbank, cfg.n_fft)
    return pcen(mel, cfg.pcen).astype(np.float32)


class StreamingFeaturizer:
    """Incremental front-end with the same math as featurize_waveform.

    Feed raw samples in arbitrary chunks; complete feature rows come out as
    soon as their window is filled. PCEN smoother state is carried across
    calls, so the rows are causal with respect to the audio.
    """

    def __init__(self, cfg: FrontendConfig):
        self.cfg = cfg
        self._win = cfg.frame_spec.window_samples(cfg.sample_rate_hz)
        self._hop = cfg.frame_spec.shift_samples(cfg.sample_rate_hz)
        self._window = hann_window(self._win)
        self._fbank = mel_filterbank(
            cfg.n_mels, cfg.n_fft, cfg.sample_rate_hz, cfg.fmin_hz, cfg.fmax_hz
        )
        self.reset()

    def reset(self) -> None:
        self._buffer = np.zeros(0, dtype=np.float64)
        self._smoother = None
        self.frames_emitted = 0

    def push_samples(self, samples: np.ndarray) -> np.ndarray:
        """Consume samples, return the newly completed feature rows (k x 40)."""
        self._buffer = np.concatenate([self._buffer, np.asarray(samples, dtype=np.float64)])
        rows = []
        while len(self._buffer) >= self._win:
            frame = (self._buffer[: self._win] * self._window)[None, :]
            energy = mel_energies(frame, self._fbank, self.cfg.n_fft)[0]
            if self._smoother is None:
                self._smoother = energy.copy()
            else:
                s = self.cfg.pcen.smoothing
                self._smoother = (1.0 - s) * self._smoother + s * energy
            rows.append(_pcen_row(energy, self._smoother, self.cfg.pcen))
            self._buffer = self._buffer[self._hop :]
            self.frames_emitted += 1
        if not rows:
            return np.zeros((0, self.cfg.n_mels), dtype=np.float32)
        return np.asarray(rows).astype(np.float32)


def write_features(path, feats: np.ndarray) -> None:
    """Write a feature matrix in the binary cache format.

    Layout: magic "KWSF", little-endian u32 frame count, u32 dim, then
    frame-major float32 data.
    """
    feats = np.ascontiguousarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(KWSF_MAGIC)
        fh.write(struct.pack("<II", feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != KWSF_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, not a feature cache file")
        header = fh.read(8)
        if len(header) != 8:
            raise DataError(f"{path}: truncated header")
        n_frames, dim = struct.unpack("<II", header)
        data = fh.read(4 * n_frames * dim)
        if len(data) != 4 * n_frames * dim:
            raise DataError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype="<f4").reshape(n_frames, dim).copy()


def write_features_tsv(path, feats: np.ndarray) -> None:
    """Plain-text feature dump for debugging: one frame per row."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in feats:
            fh.write("\t".join(f"{v:.9g}" for v in row))
            fh.write("\n")
