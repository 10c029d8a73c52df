"""Command-line interface wiring the pipelines together.

Exit codes are a stable contract for scripting: 0 success, 1 usage error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import data, features, labeling, models, pipelines
from .config import RunConfig, load_config
from .errors import DataError, NumericError
from .streaming import StreamingPipeline

_CONFIG_OPTION = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="INI run configuration; defaults apply when omitted.",
)
_CACHE_OPTION = click.option(
    "--cache-dir", envvar="SEQSPOT_CACHE", type=click.Path(file_okay=False),
    required=True, help="Feature cache root (or set SEQSPOT_CACHE).",
)
_ALIGN_OPTION = click.option(
    "--alignments", "alignments_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="Alignment file; overrides the config [paths] entry.",
)


def _load(config_path) -> RunConfig:
    return load_config(config_path) if config_path else RunConfig()


@click.group()
def cli():
    """Streaming keyword spotter: featurize, label, train, evaluate, stream."""


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@_CACHE_OPTION
def featurize(manifest, config_path, cache_dir):
    """Compute and cache features for every manifest entry."""
    cfg = _load(config_path)
    report = pipelines.run_featurize(manifest, cfg, cache_dir)
    click.echo(f"featurized {report.written} utterance(s), {report.skipped} up to date")
    if report.written == 0 and report.skipped == 0 and not report.failures:
        click.echo("warning: manifest is empty, nothing to do", err=True)
    for utt_id, message in report.failures:
        click.echo(f"failed {utt_id}: {message}", err=True)
    if report.failures:
        raise DataError(f"{len(report.failures)} utterance(s) failed to featurize")


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@_ALIGN_OPTION
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def label(manifest, config_path, alignments_path, out_dir):
    """Write per-frame label TSVs derived from the alignments."""
    cfg = _load(config_path)
    entries = data.read_manifest(manifest)
    alignments = pipelines._load_alignments(cfg, manifest, alignments_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for entry in entries:
        wave_in = features.read_wav(entry.wav_path)
        n_frames = cfg.frontend.frame_spec.frame_count(
            len(wave_in.samples), wave_in.sample_rate_hz
        )
        if entry.alignment_id is None:
            align = labeling.Alignment(tokens=())
        elif entry.alignment_id in alignments:
            align = alignments[entry.alignment_id]
        else:
            raise DataError(f"alignment id {entry.alignment_id!r} not found")
        ls = labeling.labels_from_alignment(
            align, cfg.labeling.keyword_spec, n_frames, cfg.labeling.hold_frames
        )
        labeling.write_labels_tsv(out / f"{entry.utt_id}.labels.tsv", ls)
        written += 1
    click.echo(f"wrote labels for {written} utterance(s) to {out}")


@cli.command()
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--dev-manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@_CACHE_OPTION
@_ALIGN_OPTION
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--model", "model_name", default="seq2seq-gru", show_default=True,
              help="<seq2seq|baseline>-<lstm|gru>")
@click.option("--epochs", type=int, default=None, help="Override [training] epochs.")
@click.option("--seed", type=int, default=None, help="Override [training] seed.")
@click.option("--resume", "resume_checkpoint", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Continue from an existing checkpoint.")
def train(manifest, dev_manifest, config_path, cache_dir, alignments_path, out_dir,
          model_name, epochs, seed, resume_checkpoint):
    """Train a model; writes final/best checkpoints and the metrics log."""
    cfg = _load(config_path)
    overrides = {}
    if epochs is not None:
        overrides["epochs"] = epochs
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, **overrides))
    result = pipelines.run_train(
        manifest, dev_manifest, cfg, cache_dir, out_dir,
        model_name=model_name, alignments_path=alignments_path,
        resume_checkpoint=resume_checkpoint,
    )
    last = result.metrics[-1]
    click.echo(
        f"trained {model_name}: {last.step} steps, final train loss {last.train_loss:.4f}, "
        f"dev FRR {100.0 * last.dev_frr_at_target:.2f}%"
    )
    click.echo(f"checkpoints: {result.final_checkpoint} / {result.best_checkpoint}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@_CACHE_OPTION
@_ALIGN_OPTION
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--smooth-n", "smooth_grid", type=int, multiple=True,
              help="Smoothing window(s); repeat for a sweep. Default: config value.")
@click.option("--dump-probs", is_flag=True, help="Also write per-frame probability TSVs.")
def eval_cmd(checkpoint, manifest, config_path, cache_dir, alignments_path, out_dir,
             smooth_grid, dump_probs):
    """Evaluate a checkpoint: ROC TSV + figure + FRR at the FA target."""
    cfg = _load(config_path)
    result = pipelines.run_eval(
        checkpoint, manifest, cfg, cache_dir, out_dir,
        smooth_grid=list(smooth_grid) or None,
        alignments_path=alignments_path, dump_probs=dump_probs,
    )
    model = models.load_checkpoint(checkpoint)
    count = models.param_count(model)
    click.echo(f"parameters: {count} ({models.params_k(count):.1f}K)")
    for n, point in result.operating_points.items():
        flag = "" if point.meets_target else " (FA target not reached)"
        click.echo(
            f"n={n}: FRR {100.0 * point.frr:.2f}% at {cfg.eval.fa_target_per_hour} FA/hr"
            f" (threshold {point.threshold:.3f}){flag}"
        )
    click.echo(f"outputs under {result.summary_path.parent}")


@cli.command("sweep-encoders")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--dev-manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--eval-manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@_CACHE_OPTION
@_ALIGN_OPTION
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--grid", default=None,
              help="Comma-separated cell-layers-units triples, e.g. lstm-1-64,gru-2-128.")
@click.option("--model-kind", default="seq2seq", type=click.Choice(["seq2seq", "baseline"]))
def sweep_encoders(manifest, dev_manifest, eval_manifest, config_path, cache_dir,
                   alignments_path, out_dir, grid, model_kind):
    """Train and compare a grid of encoder architectures."""
    cfg = _load(config_path)
    rows = pipelines.run_sweep_encoders(
        manifest, dev_manifest, eval_manifest, cfg, cache_dir, out_dir,
        grid=grid, model_kind=model_kind, alignments_path=alignments_path,
    )
    from .evaluation import format_comparison_table

    click.echo(format_comparison_table(rows, cfg.eval.fa_target_per_hour))


@cli.command("sweep-smoothing")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@_CACHE_OPTION
@_ALIGN_OPTION
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--n-grid", default="1,2,5,12", show_default=True,
              help="Comma-separated smoothing window lengths.")
def sweep_smoothing(checkpoint, manifest, config_path, cache_dir, alignments_path,
                    out_dir, n_grid):
    """Evaluate one checkpoint across smoothing window lengths."""
    cfg = _load(config_path)
    try:
        grid = [int(v) for v in n_grid.split(",") if v.strip()]
    except ValueError as exc:
        raise DataError(f"bad --n-grid value {n_grid!r}: {exc}") from exc
    result = pipelines.run_eval(
        checkpoint, manifest, cfg, cache_dir, out_dir,
        smooth_grid=grid, alignments_path=alignments_path,
    )
    for n, point in result.operating_points.items():
        click.echo(f"n={n}: FRR {100.0 * point.frr:.2f}%")
    click.echo(f"outputs under {result.summary_path.parent}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@_CONFIG_OPTION
@click.option("--wav", "wav_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Read this WAV file; omit to stream 16-bit PCM from stdin.")
@click.option("--threshold", type=float, default=None, help="Override [decoder] threshold.")
@click.option("--smooth-n", type=int, default=None, help="Override [decoder] smooth_frames.")
@click.option("--lockout", type=int, default=None, help="Override [decoder] lockout_frames.")
def stream(checkpoint, config_path, wav_path, threshold, smooth_n, lockout):
    """Frame-synchronous detection; emits one JSON line per trigger event."""
    cfg = _load(config_path)
    model = models.load_checkpoint(checkpoint)
    pipeline = StreamingPipeline(
        model,
        cfg.frontend,
        smooth_frames=smooth_n if smooth_n is not None else cfg.decoder.smooth_frames,
        threshold=threshold if threshold is not None else cfg.decoder.threshold,
        lockout_frames=lockout if lockout is not None else cfg.decoder.lockout_frames,
    )
    spec = cfg.frontend.frame_spec
    rate = cfg.frontend.sample_rate_hz
    window_s = spec.window_ms / 1000.0
    shift_s = spec.shift_ms / 1000.0

    def handle(chunk: np.ndarray) -> int:
        emitted = 0
        for frame_index, smoothed, event in pipeline.push_samples(chunk):
            if event is not None:
                record = {
                    "frame_index": event.frame_index,
                    "time_seconds": round(frame_index * shift_s + window_s, 6),
                    "y_hat": event.smoothed_probability,
                    "wall_time": time.time(),
                }
                click.echo(json.dumps(record))
                emitted += 1
        return emitted

    total_events = 0
    if wav_path is not None:
        wave_in = features.read_wav(wav_path)
        if wave_in.sample_rate_hz != rate:
            raise DataError(
                f"{wav_path}: sample rate {wave_in.sample_rate_hz} Hz, expected {rate} Hz"
            )
        chunk_samples = spec.shift_samples(rate) * 16
        for lo in range(0, len(wave_in.samples), chunk_samples):
            total_events += handle(wave_in.samples[lo : lo + chunk_samples])
    else:
        bytes_per_chunk = spec.shift_samples(rate) * 2 * 16
        while True:
            buf = sys.stdin.buffer.read(bytes_per_chunk)
            if not buf:
                break
            if len(buf) % 2:
                buf = buf[:-1]
            samples = np.frombuffer(buf, dtype="<i2").astype(np.float64) / 32768.0
            total_events += handle(samples)
    click.echo(f"stream ended: {pipeline.decoder.frames_seen} frames, {total_events} event(s)",
               err=True)


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3
    except (DataError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
