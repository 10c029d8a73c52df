"""End-to-end operations behind the CLI: featurize, train, evaluate, sweep.

Each function takes explicit paths plus a RunConfig and writes its outputs
(delimited files and matching figures) under an output directory, so runs
are reproducible from (inputs, config, seed) alone.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data, evaluation, labeling, models, plots, training
from .config import RunConfig
from .errors import DataError
from .streaming import smooth_track


@dataclass
class FeaturizeReport:
    written: int
    skipped: int
    failures: list[tuple[str, str]]  # (utt_id, message)


def run_featurize(manifest_path, cfg: RunConfig, cache_dir) -> FeaturizeReport:
    """Fill the feature cache for every manifest entry; idempotent."""
    entries = data.read_manifest(manifest_path)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    failures = []
    for entry in entries:
        try:
            if data.featurize_entry(entry, cfg.frontend, cache_dir):
                written += 1
            else:
                skipped += 1
        except (DataError, ValueError, OSError) as exc:
            failures.append((entry.utt_id, str(exc)))
    return FeaturizeReport(written=written, skipped=skipped, failures=failures)


def _load_alignments(cfg: RunConfig, manifest_path, override=None) -> dict:
    path = override or cfg.paths.alignments
    if path is None:
        return {}
    path = Path(path)
    if not path.is_absolute():
        path = Path(manifest_path).parent / path
    return labeling.parse_alignment_file(path)


def load_split(manifest_path, cfg: RunConfig, cache_dir, alignments_path=None):
    """Manifest + cache + alignments -> labeled utterances."""
    entries = data.read_manifest(manifest_path)
    alignments = _load_alignments(cfg, manifest_path, alignments_path)
    return data.load_utterances(
        entries,
        cache_dir,
        alignments,
        cfg.labeling.keyword_spec,
        cfg.labeling.hold_frames,
    )


def parse_model_name(name: str) -> tuple[str, str]:
    """Split a '--model' value like 'seq2seq-gru' into (kind, cell)."""
    kinds = {"seq2seq": "seq2seq", "baseline": "attention", "attention": "attention"}
    parts = name.lower().split("-")
    if len(parts) != 2 or parts[0] not in kinds or parts[1] not in ("lstm", "gru"):
        raise DataError(
            f"bad model name {name!r}; expected <seq2seq|baseline>-<lstm|gru>"
        )
    return kinds[parts[0]], parts[1]


def build_model_from_config(kind: str, cell: str, cfg: RunConfig):
    enc = models.EncoderConfig(
        cell_kind=cell,
        num_layers=cfg.encoder.num_layers,
        hidden_units=cfg.encoder.hidden_units,
        input_dim=cfg.frontend.n_mels,
    )
    if kind == "seq2seq":
        return models.Seq2SeqModel.build(enc, seed=cfg.training.seed, dtype=cfg.training.dtype)
    return models.AttentionModel.build(
        enc,
        seed=cfg.training.seed,
        dtype=cfg.training.dtype,
        attn_dim=cfg.attention.attn_dim,
        train_len=cfg.attention.train_len,
        runtime_window=cfg.attention.runtime_window,
    )


@dataclass
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path
    metrics_path: Path
    metrics: list[training.EpochMetrics]


def run_train(
    train_manifest,
    dev_manifest,
    cfg: RunConfig,
    cache_dir,
    out_dir,
    model_name: str = "seq2seq-gru",
    alignments_path=None,
    resume_checkpoint=None,
) -> TrainResult:
    """Train one model and write checkpoints, the metrics log, and a figure."""
    kind, cell = parse_model_name(model_name)
    train_utts = load_split(train_manifest, cfg, cache_dir, alignments_path)
    dev_utts = load_split(dev_manifest, cfg, cache_dir, alignments_path)
    if not train_utts:
        raise DataError("training manifest resolves to an empty dataset")
    model = build_model_from_config(kind, cell, cfg)
    if resume_checkpoint is not None:
        loaded = models.load_checkpoint(resume_checkpoint, dtype=cfg.training.dtype)
        if loaded.config_dict() != model.config_dict():
            raise DataError("resume checkpoint does not match the configured model")
        model.params.load_values(loaded.params.copy_values())
    metrics, best_values = training.train(
        model, train_utts, dev_utts, cfg.training, cfg.eval_settings()
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    final_path = out / "model_final.kwsm"
    best_path = out / "model_best.kwsm"
    models.save_checkpoint(final_path, model)
    if best_values is not None:
        model.params.load_values(best_values)
    models.save_checkpoint(best_path, model)
    metrics_path = out / "metrics.jsonl"
    training.write_metrics_log(metrics_path, metrics)
    plots.save_training_figure(metrics, out / "training.png")
    return TrainResult(
        final_checkpoint=final_path,
        best_checkpoint=best_path,
        metrics_path=metrics_path,
        metrics=metrics,
    )


@dataclass
class EvalResult:
    operating_points: dict[int, evaluation.OperatingPoint]  # smoothing n -> point
    roc_paths: dict[int, Path]
    summary_path: Path
    figure_path: Path
    report_path: Path


def run_eval(
    checkpoint,
    manifest,
    cfg: RunConfig,
    cache_dir,
    out_dir,
    smooth_grid: Optional[Sequence[int]] = None,
    alignments_path=None,
    dump_probs: bool = False,
) -> EvalResult:
    """Score an eval split at one or more smoothing settings.

    Writes one ROC TSV per smoothing value, a combined figure, a summary
    TSV, and a plain-text report with the headline FRR.
    """
    model = models.load_checkpoint(checkpoint)
    utts = load_split(manifest, cfg, cache_dir, alignments_path)
    positives = [u for u in utts if u.is_positive]
    negatives = [u for u in utts if not u.is_positive]
    if not positives or not negatives:
        raise DataError("evaluation needs at least one positive and one negative utterance")
    smooth_grid = list(smooth_grid) if smooth_grid else [cfg.decoder.smooth_frames]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    raw_tracks = {u.utt_id: model.forward(u.feats) for u in utts}
    thresholds = evaluation.default_threshold_grid(cfg.eval.threshold_points)
    points: dict[int, evaluation.OperatingPoint] = {}
    roc_paths: dict[int, Path] = {}
    curves: dict[str, evaluation.RocCurve] = {}
    for n in smooth_grid:
        scores = []
        traces = []
        for u in utts:
            smoothed = smooth_track(raw_tracks[u.utt_id], n)
            if u.is_positive:
                scores.append(evaluation.UtteranceScore(u.utt_id, float(smoothed.max())))
            else:
                hours = cfg.frontend.frame_spec.frames_duration_s(len(smoothed)) / 3600.0
                traces.append(evaluation.NegativeTrace(u.utt_id, smoothed, hours))
        curve = evaluation.sweep_roc(scores, traces, thresholds, cfg.decoder.lockout_frames)
        roc_path = out / f"roc_n{n}.tsv"
        evaluation.write_roc_tsv(roc_path, curve)
        roc_paths[n] = roc_path
        points[n] = evaluation.frr_at_fa(curve, cfg.eval.fa_target_per_hour)
        curves[f"n={n}"] = curve

    figure_path = out / "roc.png"
    plots.save_roc_figure(curves, figure_path, fa_target=cfg.eval.fa_target_per_hour)
    if len(smooth_grid) > 1:
        plots.save_smoothing_figure(
            smooth_grid, [points[n].frr for n in smooth_grid], out / "smoothing.png"
        )

    summary_path = out / "summary.tsv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("smooth_frames\tfrr\tthreshold\tfa_per_hour\tmeets_fa_target\n")
        for n in smooth_grid:
            p = points[n]
            fh.write(
                f"{n}\t{p.frr:.9g}\t{p.threshold:.9g}\t{p.fa_per_hour:.9g}\t{int(p.meets_target)}\n"
            )

    count = models.param_count(model)
    report_path = out / "report.txt"
    primary = points[smooth_grid[0]]
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(f"checkpoint: {checkpoint}\n")
        fh.write(f"parameters: {count} ({models.params_k(count):.1f}K)\n")
        fh.write(f"positives: {len(positives)}  negatives: {len(negatives)}\n")
        for n in smooth_grid:
            p = points[n]
            flag = "" if p.meets_target else " (FA target not reached)"
            fh.write(
                f"smoothing n={n}: FRR {100.0 * p.frr:.2f}% at "
                f"{cfg.eval.fa_target_per_hour} FA/hr (threshold {p.threshold:.3f}){flag}\n"
            )

    if dump_probs:
        probs_dir = out / "probs"
        probs_dir.mkdir(exist_ok=True)
        for u in utts:
            attn = (
                probs_dir / f"{u.utt_id}.attention.tsv"
                if isinstance(model, models.AttentionModel)
                else None
            )
            models.export_frame_probabilities(model, u.feats, probs_dir / f"{u.utt_id}.tsv", attn)
    return EvalResult(
        operating_points=points,
        roc_paths=roc_paths,
        summary_path=summary_path,
        figure_path=figure_path,
        report_path=report_path,
    )


DEFAULT_ENCODER_GRID = (
    "lstm-1-64",
    "lstm-2-64",
    "lstm-3-64",
    "lstm-1-128",
    "gru-1-64",
    "gru-2-64",
    "gru-3-64",
    "gru-1-128",
    "gru-2-128",
)


def parse_encoder_grid(spec: str) -> list[tuple[str, int, int]]:
    """Parse 'cell-layers-units' triples from a comma-separated list."""
    configs = []
    for item in spec.split(","):
        parts = item.strip().lower().split("-")
        if len(parts) != 3 or parts[0] not in ("lstm", "gru"):
            raise DataError(f"bad encoder grid entry {item!r}; expected cell-layers-units")
        try:
            configs.append((parts[0], int(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise DataError(f"bad encoder grid entry {item!r}: {exc}") from exc
    return configs


def run_sweep_encoders(
    train_manifest,
    dev_manifest,
    eval_manifest,
    cfg: RunConfig,
    cache_dir,
    out_dir,
    grid: Optional[str] = None,
    model_kind: str = "seq2seq",
    alignments_path=None,
):
    """Train and evaluate every encoder in the grid; emit the comparison table."""
    import dataclasses

    configs = parse_encoder_grid(grid) if grid else [
        (c, int(l), int(u)) for c, l, u in (item.split("-") for item in DEFAULT_ENCODER_GRID)
    ]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    curves = {}
    for cell, layers, units in configs:
        label = f"{cell}-{layers}-{units}"
        sub_cfg = dataclasses.replace(
            cfg,
            encoder=models.EncoderConfig(
                cell_kind=cell, num_layers=layers, hidden_units=units, input_dim=cfg.frontend.n_mels
            ),
        )
        result = run_train(
            train_manifest,
            dev_manifest,
            sub_cfg,
            cache_dir,
            out / label,
            model_name=f"{model_kind}-{cell}",
            alignments_path=alignments_path,
        )
        eval_result = run_eval(
            result.best_checkpoint,
            eval_manifest,
            sub_cfg,
            cache_dir,
            out / label / "eval",
            alignments_path=alignments_path,
        )
        point = eval_result.operating_points[sub_cfg.decoder.smooth_frames]
        model = models.load_checkpoint(result.best_checkpoint)
        rows.append(
            evaluation.ComparisonRow(
                model=label,
                frr=point.frr,
                params_k=models.params_k(models.param_count(model)),
                meets_target=point.meets_target,
            )
        )
        curves[label] = evaluation.read_roc_tsv(
            eval_result.roc_paths[sub_cfg.decoder.smooth_frames]
        )
    evaluation.write_comparison_tsv(out / "encoders.tsv", rows)
    (out / "encoders.txt").write_text(
        evaluation.format_comparison_table(rows, cfg.eval.fa_target_per_hour) + "\n"
    )
    plots.save_roc_figure(curves, out / "encoders_roc.png", fa_target=cfg.eval.fa_target_per_hour)
    plots.save_size_tradeoff_figure(rows, out / "encoders_size.png")
    return rows
