"""Field-level evaluation: confusion counts, metrics, the alpha sweep, and
the multi-seed protocol that averages a full pipeline run over seeds.

Conventions (the degenerate cases are defined, not NaN): stressed is the
positive class; precision and recall are 0 when their denominator is 0;
F1 = 2tp/(2tp+fp+fn) and equals 1.0 when tp = fp = fn = 0.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baseline_features import histogram_feature_matrix, raw_feature_matrix
from .cluster_agg import (
    STRESSED,
    FieldPrediction,
    aggregate,
    assign,
    kmeans_fit,
    map_clusters,
)
from .config import RunConfig
from .errors import EmptyConfusion, MissingPrediction
from .models import AutoencoderSpec, TrainConfig, build, encode_batch
from .models import train as train_model
from .preprocess import compute_indices, store_field_ids, store_dates
from .scene_io import LabelSet

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_SEEDS = (0, 1, 2)
METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(preds: list[FieldPrediction], labels: LabelSet) -> ConfusionCounts:
    """Count stressed-positive outcomes; every labeled field needs a prediction.

    Predictions for unlabeled fields are ignored.
    """
    by_id = {p.field_id: p for p in preds}
    missing = sorted(set(labels.entries) - set(by_id))
    if missing:
        raise MissingPrediction(f"labeled fields without a prediction: {missing}")
    tp = fp = fn = tn = 0
    for fid, truth in labels.entries.items():
        predicted = by_id[fid].label == STRESSED
        actual = truth == STRESSED
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(c: ConfusionCounts) -> dict:
    if c.total < 1:
        raise EmptyConfusion("no evaluated fields")
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 1.0 if c.tp == c.fp == c.fn == 0 else 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def evaluable_labels(preds: list[FieldPrediction], labels: LabelSet) -> LabelSet:
    """Restrict a label set to fields that actually have predictions.

    Fields skipped upstream (clouds, erosion, size) cannot be scored; the
    drop is logged so shrinking evaluation sets are visible.
    """
    present = {p.field_id for p in preds}
    kept = {fid: lab for fid, lab in labels.entries.items() if fid in present}
    dropped = len(labels.entries) - len(kept)
    if dropped:
        logger.info("evaluation set: %d of %d labeled fields have predictions",
                    len(kept), len(labels.entries))
    return LabelSet(entries=kept)


# ---------------------------------------------------------------------------
# Alpha sweep
# ---------------------------------------------------------------------------

def sweep_alpha(field_ids: np.ndarray, stressed: np.ndarray, labels: LabelSet,
                alphas: tuple[float, ...] = DEFAULT_ALPHAS) -> list[dict]:
    """Aggregate and score once per threshold over a fixed clustering output."""
    rows = []
    for alpha in alphas:
        preds = aggregate(field_ids, stressed, alpha)
        scored = evaluable_labels(preds, labels)
        m = metrics(confusion([p for p in preds if p.field_id in scored.entries], scored))
        row = {"alpha": alpha, "n_stressed": sum(p.label == STRESSED for p in preds)}
        row.update(m)
        rows.append(row)
    return rows


def write_curves(rows: list[dict], path: str | Path) -> None:
    """curves.csv: alpha,precision,recall,f1 with 6-decimal values."""
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "precision", "recall", "f1"])
        for row in rows:
            writer.writerow(
                [f"{row['alpha']:.1f}"]
                + [f"{row[k]:.6f}" for k in ("precision", "recall", "f1")]
            )


# ---------------------------------------------------------------------------
# NDVI summaries for the label-free mapping strategy
# ---------------------------------------------------------------------------

def record_ndvi(tensors: np.ndarray, channel_names: list[str]) -> np.ndarray:
    """Mean NDVI over the last two timepoints, one value per store record.

    The MVI variant carries NDVI as a channel; band variants compute it from
    B04/B08.
    """
    late = tensors[:, -2:].astype(np.float64)  # (N, 2, C, 4, 4)
    if "NDVI" in channel_names:
        ch = channel_names.index("NDVI")
        values = late[:, :, ch]
    else:
        b04 = late[:, :, channel_names.index("B04")]
        b08 = late[:, :, channel_names.index("B08")]
        values, _, _ = compute_indices(np.zeros_like(b04), b04, b08, np.zeros_like(b04))
    return values.reshape(values.shape[0], -1).mean(axis=1)


def cluster_ndvi_means(assignments: np.ndarray, ndvi: np.ndarray) -> dict[int, float]:
    means = {}
    for cluster in (0, 1):
        members = ndvi[assignments == cluster]
        means[cluster] = float(members.mean()) if members.size else float("inf")
    return means


# ---------------------------------------------------------------------------
# Per-seed pipeline and the multi-seed protocol
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    assignments: np.ndarray
    stressed_cluster: int
    predictions: list[FieldPrediction]
    counts: ConfusionCounts
    metrics: dict
    history: list[dict]


def features_for_seed(tensors: np.ndarray, dates: np.ndarray, index: dict,
                      cfg: RunConfig, seed: int) -> tuple[np.ndarray, list[dict]]:
    """Feature matrix (one row per store record) for the configured method.

    raw/histogram features are seed-independent; autoencoder methods train a
    model from scratch with the given seed and return its loss history.
    """
    provenance = [(r["field_id"], r["grid_row"], r["grid_col"]) for r in index["records"]]
    if cfg.method == "raw":
        return raw_feature_matrix(tensors, provenance).values, []
    if cfg.method == "histogram":
        return histogram_feature_matrix(tensors, provenance, bins=cfg.bins).values, []

    channels = tensors.shape[2]
    in_channels = channels if cfg.method == "ae3d" else channels * tensors.shape[1]
    spec = AutoencoderSpec(kind=cfg.method, in_channels=in_channels, latent_dim=cfg.latent_dim)
    model = build(spec, seed=seed)
    use_enc = cfg.temporal_encodings and cfg.method == "ae3d"
    train_cfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=seed,
        train_fraction=cfg.train_fraction,
    )
    history = train_model(model, tensors, dates, train_cfg,
                          use_encodings=use_enc, encoding_mode=cfg.encoding_mode)
    feats = encode_batch(model, tensors, dates, index,
                         use_encodings=use_enc, encoding_mode=cfg.encoding_mode)
    return np.stack([f.z for f in feats]), history


def run_seed(tensors: np.ndarray, dates: np.ndarray, index: dict, labels: LabelSet,
             cfg: RunConfig, seed: int) -> SeedResult:
    """train -> encode -> cluster -> map -> aggregate -> metrics for one seed."""
    feats, history = features_for_seed(tensors, dates, index, cfg, seed)
    km = kmeans_fit(feats, k=2, seed=seed, restarts=cfg.restarts)
    assignments = assign(km, feats)
    field_ids = store_field_ids(index)
    if cfg.mapping_strategy == "low_ndvi":
        ndvi = record_ndvi(tensors, index.get("channel_names", []))
        mapping = map_clusters(assignments, field_ids, cfg.alpha, strategy="low_ndvi",
                               ndvi_means=cluster_ndvi_means(assignments, ndvi))
    else:
        mapping = map_clusters(assignments, field_ids, cfg.alpha, labels=labels,
                               strategy="best_f1")
    stressed_cluster = next(c for c, name in mapping.items() if name == STRESSED)
    preds = aggregate(field_ids, assignments == stressed_cluster, cfg.alpha)
    scored = evaluable_labels(preds, labels)
    counts = confusion([p for p in preds if p.field_id in scored.entries], scored)
    return SeedResult(
        seed=seed,
        assignments=assignments,
        stressed_cluster=stressed_cluster,
        predictions=preds,
        counts=counts,
        metrics=metrics(counts),
        history=history,
    )


def _mean_std(per_seed: list[dict]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for name in METRIC_NAMES:
        values = np.array([entry[name] for entry in per_seed], dtype=np.float64)
        mean[name] = float(values.mean())
        std[name] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return mean, std


def report_from_seed_metrics(per_seed: list[dict], cfg: RunConfig) -> dict:
    """Assemble the EvalReport structure from per-seed metric entries."""
    mean, std = _mean_std(per_seed)
    return {
        "config": cfg.snapshot(),
        "seeds": [entry["seed"] for entry in per_seed],
        "per_seed": per_seed,
        "mean": mean,
        "std": std,
    }


def seed_metrics_entry(seed: int, alpha: float, counts: ConfusionCounts) -> dict:
    entry = {"seed": seed, "alpha": alpha}
    entry.update(metrics(counts))
    entry["confusion"] = counts.as_dict()
    return entry


def run_protocol(tensors: np.ndarray, dates: np.ndarray, index: dict, labels: LabelSet,
                 cfg: RunConfig) -> tuple[dict, list[SeedResult]]:
    """Execute the full pipeline once per configured seed and average."""
    results = [run_seed(tensors, dates, index, labels, cfg, seed) for seed in cfg.seeds]
    per_seed = [seed_metrics_entry(r.seed, cfg.alpha, r.counts) for r in results]
    return report_from_seed_metrics(per_seed, cfg), results


def report_from_predictions(per_seed_preds: dict[int, list[FieldPrediction]],
                            labels: LabelSet, cfg: RunConfig) -> dict:
    """EvalReport from already-written per-seed predictions (CLI evaluate path)."""
    per_seed = []
    for seed in sorted(per_seed_preds):
        preds = per_seed_preds[seed]
        scored = evaluable_labels(preds, labels)
        counts = confusion([p for p in preds if p.field_id in scored.entries], scored)
        per_seed.append(seed_metrics_entry(seed, cfg.alpha, counts))
    return report_from_seed_metrics(per_seed, cfg)


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
