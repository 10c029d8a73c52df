"""Declarative run configuration: INI-style key = value sections.

Every field is validated against its owning type's invariants when the
file loads; unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Optional

from .errors import DataError
from .features import FrameSpec, FrontendConfig, PcenConfig
from .labeling import KeywordSpec
from .models import DEFAULT_ATTN_DIM, DEFAULT_RUNTIME_WINDOW, DEFAULT_TRAIN_LEN, EncoderConfig
from .training import EvalSettings, TrainConfig


@dataclass(frozen=True)
class AttentionSettings:
    attn_dim: int = DEFAULT_ATTN_DIM
    train_len: int = DEFAULT_TRAIN_LEN
    runtime_window: int = DEFAULT_RUNTIME_WINDOW

    def __post_init__(self):
        if self.attn_dim < 1 or self.train_len < 1 or self.runtime_window < 1:
            raise ValueError("attention dimensions must be positive")


@dataclass(frozen=True)
class LabelingSettings:
    keyword: tuple[str, ...] = ("kw1", "kw2", "kw3", "kw4")
    hold_frames: Optional[int] = None  # None = positive labels run to clip end

    def __post_init__(self):
        KeywordSpec(units=self.keyword)  # validates
        if self.hold_frames is not None and self.hold_frames < 0:
            raise ValueError("hold_frames must be non-negative")

    @property
    def keyword_spec(self) -> KeywordSpec:
        return KeywordSpec(units=self.keyword)


@dataclass(frozen=True)
class DecoderSettings:
    smooth_frames: int = 12
    threshold: float = 0.5
    lockout_frames: int = 100

    def __post_init__(self):
        if self.smooth_frames < 1:
            raise ValueError("smooth_frames must be at least 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.lockout_frames < 0:
            raise ValueError("lockout_frames must be non-negative")


@dataclass(frozen=True)
class EvalConfig:
    threshold_points: int = 1001
    fa_target_per_hour: float = 0.1

    def __post_init__(self):
        if self.threshold_points < 2:
            raise ValueError("need at least two threshold grid points")
        if self.fa_target_per_hour <= 0:
            raise ValueError("FA target must be positive")


@dataclass(frozen=True)
class PathSettings:
    alignments: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(hidden_units=128))
    attention: AttentionSettings = field(default_factory=AttentionSettings)
    labeling: LabelingSettings = field(default_factory=LabelingSettings)
    training: TrainConfig = field(default_factory=TrainConfig)
    decoder: DecoderSettings = field(default_factory=DecoderSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathSettings = field(default_factory=PathSettings)

    def eval_settings(self) -> EvalSettings:
        return EvalSettings(
            smooth_frames=self.decoder.smooth_frames,
            lockout_frames=self.decoder.lockout_frames,
            fa_target_per_hour=self.eval.fa_target_per_hour,
            threshold_points=self.eval.threshold_points,
            frame_spec=self.frontend.frame_spec,
        )


# section -> key -> (parser, getter) where getter pulls the value out of a RunConfig
_SCHEMA = {
    "features": {
        "sample_rate_hz": (int, lambda c: c.frontend.sample_rate_hz),
        "window_ms": (float, lambda c: c.frontend.frame_spec.window_ms),
        "shift_ms": (float, lambda c: c.frontend.frame_spec.shift_ms),
        "n_fft": (int, lambda c: c.frontend.n_fft),
        "n_mels": (int, lambda c: c.frontend.n_mels),
        "fmin_hz": (float, lambda c: c.frontend.fmin_hz),
        "fmax_hz": (float, lambda c: c.frontend.fmax_hz),
    },
    "pcen": {
        "smoothing": (float, lambda c: c.frontend.pcen.smoothing),
        "gain": (float, lambda c: c.frontend.pcen.gain),
        "bias": (float, lambda c: c.frontend.pcen.bias),
        "root": (float, lambda c: c.frontend.pcen.root),
        "floor": (float, lambda c: c.frontend.pcen.floor),
    },
    "encoder": {
        "cell": (str, lambda c: c.encoder.cell_kind),
        "layers": (int, lambda c: c.encoder.num_layers),
        "units": (int, lambda c: c.encoder.hidden_units),
    },
    "attention": {
        "attn_dim": (int, lambda c: c.attention.attn_dim),
        "train_len": (int, lambda c: c.attention.train_len),
        "runtime_window": (int, lambda c: c.attention.runtime_window),
    },
    "labeling": {
        "keyword": (str, lambda c: ",".join(c.labeling.keyword)),
        "hold_frames": (
            str,
            lambda c: "" if c.labeling.hold_frames is None else str(c.labeling.hold_frames),
        ),
    },
    "training": {
        "batch_size": (int, lambda c: c.training.batch_size),
        "learning_rate": (float, lambda c: c.training.learning_rate),
        "clip_norm": (float, lambda c: c.training.clip_norm),
        "l2_lambda": (float, lambda c: c.training.l2_lambda),
        "epochs": (int, lambda c: c.training.epochs),
        "seed": (int, lambda c: c.training.seed),
        "precision": (str, lambda c: c.training.precision),
    },
    "decoder": {
        "smooth_frames": (int, lambda c: c.decoder.smooth_frames),
        "threshold": (float, lambda c: c.decoder.threshold),
        "lockout_frames": (int, lambda c: c.decoder.lockout_frames),
    },
    "eval": {
        "threshold_points": (int, lambda c: c.eval.threshold_points),
        "fa_target_per_hour": (float, lambda c: c.eval.fa_target_per_hour),
    },
    "paths": {
        "alignments": (str, lambda c: c.paths.alignments or ""),
    },
}


def _parse_values(parser: configparser.ConfigParser, source: str) -> dict[str, dict[str, str]]:
    values: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise DataError(f"{source}: unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise DataError(f"{source}: unknown key {key!r} in section [{section}]")
            values[section][key] = raw
    return values


def _get(values, section, key, convert, default):
    raw = values.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        return convert(raw)
    except ValueError as exc:
        raise DataError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc


def config_from_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise DataError(f"{source}: {exc}") from exc
    values = _parse_values(parser, source)
    defaults = RunConfig()

    def get(section, key, convert, default):
        return _get(values, section, key, convert, default)

    try:
        frontend = FrontendConfig(
            sample_rate_hz=get("features", "sample_rate_hz", int, defaults.frontend.sample_rate_hz),
            frame_spec=FrameSpec(
                window_ms=get("features", "window_ms", float, 25.0),
                shift_ms=get("features", "shift_ms", float, 10.0),
            ),
            n_fft=get("features", "n_fft", int, defaults.frontend.n_fft),
            n_mels=get("features", "n_mels", int, defaults.frontend.n_mels),
            fmin_hz=get("features", "fmin_hz", float, defaults.frontend.fmin_hz),
            fmax_hz=get("features", "fmax_hz", float, defaults.frontend.fmax_hz),
            pcen=PcenConfig(
                smoothing=get("pcen", "smoothing", float, 0.025),
                gain=get("pcen", "gain", float, 0.98),
                bias=get("pcen", "bias", float, 2.0),
                root=get("pcen", "root", float, 0.5),
                floor=get("pcen", "floor", float, 1e-6),
            ),
        )
        hold_raw = get("labeling", "hold_frames", str, "")
        keyword_raw = get("labeling", "keyword", str, ",".join(defaults.labeling.keyword))
        cfg = RunConfig(
            frontend=frontend,
            encoder=EncoderConfig(
                cell_kind=get("encoder", "cell", str, defaults.encoder.cell_kind),
                num_layers=get("encoder", "layers", int, defaults.encoder.num_layers),
                hidden_units=get("encoder", "units", int, defaults.encoder.hidden_units),
                input_dim=frontend.n_mels,
            ),
            attention=AttentionSettings(
                attn_dim=get("attention", "attn_dim", int, defaults.attention.attn_dim),
                train_len=get("attention", "train_len", int, defaults.attention.train_len),
                runtime_window=get(
                    "attention", "runtime_window", int, defaults.attention.runtime_window
                ),
            ),
            labeling=LabelingSettings(
                keyword=tuple(u.strip() for u in keyword_raw.split(",") if u.strip()),
                hold_frames=None if not hold_raw.strip() else int(hold_raw),
            ),
            training=TrainConfig(
                batch_size=get("training", "batch_size", int, defaults.training.batch_size),
                learning_rate=get(
                    "training", "learning_rate", float, defaults.training.learning_rate
                ),
                clip_norm=get("training", "clip_norm", float, defaults.training.clip_norm),
                l2_lambda=get("training", "l2_lambda", float, defaults.training.l2_lambda),
                epochs=get("training", "epochs", int, defaults.training.epochs),
                seed=get("training", "seed", int, defaults.training.seed),
                precision=get("training", "precision", str, defaults.training.precision),
            ),
            decoder=DecoderSettings(
                smooth_frames=get("decoder", "smooth_frames", int, defaults.decoder.smooth_frames),
                threshold=get("decoder", "threshold", float, defaults.decoder.threshold),
                lockout_frames=get(
                    "decoder", "lockout_frames", int, defaults.decoder.lockout_frames
                ),
            ),
            eval=EvalConfig(
                threshold_points=get("eval", "threshold_points", int, defaults.eval.threshold_points),
                fa_target_per_hour=get(
                    "eval", "fa_target_per_hour", float, defaults.eval.fa_target_per_hour
                ),
            ),
            paths=PathSettings(
                alignments=(get("paths", "alignments", str, "") or None),
            ),
        )
    except ValueError as exc:
        raise DataError(f"{source}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read(), source=str(path))


def config_to_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in _SCHEMA.items():
        parser.add_section(section)
        for key, (_, getter) in keys.items():
            parser.set(section, key, str(getter(cfg)))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
