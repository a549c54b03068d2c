"""beetsense command line: synth, preprocess, train, features, cluster,
predict, evaluate, sweep, compare.

Every subcommand takes --config pointing at a JSON RunConfig; any flag
overrides its config key. Artifacts live under the work directory (config
key, --work-dir flag, or BEETSENSE_WORKDIR), one seed<k>/ directory per
configured seed, so re-running a step with unchanged inputs rewrites
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .baseline_features import histogram_feature_matrix, raw_feature_matrix
from .cluster_agg import (
    STRESSED,
    aggregate,
    assign,
    kmeans_fit,
    map_clusters,
    read_predictions,
    write_predictions,
)
from .config import RunConfig, load_config
from .errors import BeetsenseError, ConfigInvalid, MissingArtifact
from .evaluation import (
    DEFAULT_ALPHAS,
    cluster_ndvi_means,
    record_ndvi,
    report_from_predictions,
    run_protocol,
    sweep_alpha,
    write_curves,
    write_report,
)
from .models import (
    AutoencoderSpec,
    LatentFeature,
    TrainConfig,
    build,
    encode_batch,
    load_features,
    load_model,
    save_features,
    save_model,
)
from .models import train as train_model
from .preprocess import (
    VariantConfig,
    load_store,
    process_scene,
    store_dates,
    store_field_ids,
    write_store,
)
from .scene_io import load_labels, load_scene, list_scene_dirs
from .synthgen import SynthConfig, generate
from . import plots

logger = logging.getLogger("beetsense")


# ---------------------------------------------------------------------------
# Paths and prerequisites
# ---------------------------------------------------------------------------

def work_dir(cfg: RunConfig) -> Path:
    if not cfg.work_dir:
        raise ConfigInvalid(
            "work directory not set (config key work_dir, --work-dir, or BEETSENSE_WORKDIR)"
        )
    path = Path(cfg.work_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def store_prefix(cfg: RunConfig) -> Path:
    return work_dir(cfg) / f"store_{cfg.variant}"


def seed_dir(cfg: RunConfig, seed: int) -> Path:
    path = work_dir(cfg) / f"seed{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `beetsense {producer}` first")
    return path


def _load_store(cfg: RunConfig):
    prefix = store_prefix(cfg)
    _require(prefix.with_suffix(".index.json"), "preprocess")
    return load_store(prefix)


def _load_labels(cfg: RunConfig):
    if not cfg.labels_path:
        raise ConfigInvalid("labels_path not set (config key labels_path or --labels-path)")
    return load_labels(_require(Path(cfg.labels_path), "synth"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not (args.out or cfg.scenes_dir):
        raise ConfigInvalid("synth needs an output directory (config scenes_dir or --out)")
    out = Path(args.out or cfg.scenes_dir)
    synth_cfg = SynthConfig(
        num_scenes=args.num_scenes,
        scene_size=args.scene_size,
        fields_per_scene=args.fields_per_scene,
        stressed_fraction=args.stressed_fraction,
        noise_sd=args.noise_sd,
        cloud_probability=args.cloud_probability,
        instances_per_month=args.instances_per_month,
        seed=args.synth_seed,
    )
    summary = generate(synth_cfg, out)
    (out / "synth_config.json").write_text(
        json.dumps(dataclasses.asdict(synth_cfg), indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {summary['scenes']} scenes, {summary['fields']} fields "
          f"({summary['stressed']} stressed / {summary['healthy']} healthy) to {out}")
    return 0


def cmd_preprocess(cfg: RunConfig, args: argparse.Namespace) -> int:
    if not cfg.scenes_dir:
        raise ConfigInvalid("scenes_dir not set (config key scenes_dir or --scenes-dir)")
    scene_dirs = list_scene_dirs(cfg.scenes_dir)
    if not scene_dirs:
        raise MissingArtifact(f"no scenes under {cfg.scenes_dir}; run `beetsense synth` first")
    all_subs = []
    skipped: list[dict] = []
    for path in scene_dirs:
        scene = load_scene(path)
        variant_cfg = VariantConfig.for_bands(cfg.variant, scene.manifest.band_names)
        subs, scene_skipped = process_scene(scene, variant_cfg)
        all_subs.extend(subs)
        skipped.extend(
            {"scene": scene.manifest.scene_id, "field_id": fid, "reason": reason}
            for fid, reason in scene_skipped
        )
        print(f"{scene.manifest.scene_id}: {len(subs)} sub-patches, "
              f"{len(scene_skipped)} fields skipped")
    prefix = store_prefix(cfg)
    channel_names = (
        VariantConfig.for_bands(cfg.variant, load_scene(scene_dirs[0]).manifest.band_names)
        .channel_names()
    )
    write_store(all_subs, prefix, channel_names=channel_names)
    summary = {
        "variant": cfg.variant,
        "scenes": len(scene_dirs),
        "subpatches": len(all_subs),
        "fields": len({(s.source_scene, s.field_id) for s in all_subs}),
        "skipped": skipped,
    }
    (work_dir(cfg) / "preprocess_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(f"store {prefix}.f32: {summary['subpatches']} sub-patches "
          f"from {summary['fields']} fields ({len(skipped)} skipped)")
    return 0


def _autoencoder_spec(cfg: RunConfig, channels: int) -> AutoencoderSpec:
    in_channels = channels if cfg.method == "ae3d" else channels * 7
    return AutoencoderSpec(kind=cfg.method, in_channels=in_channels, latent_dim=cfg.latent_dim)


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.method not in ("ae2d", "ae3d"):
        print(f"method {cfg.method!r} needs no training; skipping")
        return 0
    tensors, index = _load_store(cfg)
    dates = store_dates(index)
    use_enc = cfg.temporal_encodings and cfg.method == "ae3d"
    for seed in cfg.seeds:
        model = build(_autoencoder_spec(cfg, tensors.shape[2]), seed=seed)
        train_cfg = TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            seed=seed,
            train_fraction=cfg.train_fraction,
        )
        history = train_model(model, tensors, dates, train_cfg,
                              use_encodings=use_enc, encoding_mode=cfg.encoding_mode)
        out = seed_dir(cfg, seed)
        save_model(model, out / "model", sidecar={
            "method": cfg.method,
            "variant": cfg.variant,
            "temporal_encodings": use_enc,
            "encoding_mode": cfg.encoding_mode,
            "seed": seed,
            "final_train_loss": history[-1]["train_loss"],
            "final_test_loss": history[-1]["test_loss"],
        })
        (out / "history.json").write_text(json.dumps(history, indent=2) + "\n")
        plots.plot_history(history, out / "loss.png",
                           title=f"{cfg.method} {cfg.variant} seed {seed}")
        print(f"seed {seed}: {cfg.epochs} epochs, "
              f"train loss {history[-1]['train_loss']:.6f}, "
              f"test loss {history[-1]['test_loss']:.6f}")
    return 0


def cmd_features(cfg: RunConfig, args: argparse.Namespace) -> int:
    tensors, index = _load_store(cfg)
    dates = store_dates(index)
    provenance = [(r["field_id"], r["grid_row"], r["grid_col"]) for r in index["records"]]
    for seed in cfg.seeds:
        out = seed_dir(cfg, seed)
        if cfg.method == "raw":
            matrix = raw_feature_matrix(tensors, provenance)
            feats = [LatentFeature(f, r, c, matrix.values[i])
                     for i, (f, r, c) in enumerate(provenance)]
        elif cfg.method == "histogram":
            matrix = histogram_feature_matrix(tensors, provenance, bins=cfg.bins)
            feats = [LatentFeature(f, r, c, matrix.values[i])
                     for i, (f, r, c) in enumerate(provenance)]
        else:
            _require(out / "model.pt", "train")
            model, sidecar = load_model(out / "model")
            feats = encode_batch(model, tensors, dates, index,
                                 use_encodings=sidecar["temporal_encodings"],
                                 encoding_mode=sidecar["encoding_mode"])
        save_features(feats, out / "features.f32", meta={"method": cfg.method})
        print(f"seed {seed}: {len(feats)} feature vectors "
              f"of dim {feats[0].z.shape[0] if feats else 0}")
    return 0


def cmd_cluster(cfg: RunConfig, args: argparse.Namespace) -> int:
    for seed in cfg.seeds:
        out = seed_dir(cfg, seed)
        _require(out / "features.f32", "features")
        feats = load_features(out / "features.f32")
        values = np.stack([f.z for f in feats])
        km = kmeans_fit(values, k=2, seed=seed, restarts=cfg.restarts)
        assignments = assign(km, values)
        (out / "kmeans.json").write_text(json.dumps({
            "k": km.k,
            "seed": km.seed,
            "restarts": cfg.restarts,
            "inertia": km.inertia,
            "centroids": km.centroids.tolist(),
        }, indent=2) + "\n")
        with (out / "assignments.csv").open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["field_id", "grid_row", "grid_col", "cluster"])
            for feat, cluster in zip(feats, assignments):
                writer.writerow([feat.field_id, feat.grid_row, feat.grid_col, int(cluster)])
        sizes = np.bincount(assignments, minlength=2)
        print(f"seed {seed}: inertia {km.inertia:.4f}, cluster sizes {sizes.tolist()}")
    return 0


def _read_assignments(path: Path) -> tuple[np.ndarray, np.ndarray]:
    field_ids, clusters = [], []
    with path.open(newline="") as f:
        for row in csv.DictReader(f):
            field_ids.append(int(row["field_id"]))
            clusters.append(int(row["cluster"]))
    return np.array(field_ids), np.array(clusters)


def cmd_predict(cfg: RunConfig, args: argparse.Namespace) -> int:
    labels = _load_labels(cfg) if cfg.mapping_strategy == "best_f1" else None
    ndvi = None
    if cfg.mapping_strategy == "low_ndvi":
        tensors, index = _load_store(cfg)
        ndvi = record_ndvi(tensors, index.get("channel_names", []))
    for seed in cfg.seeds:
        out = seed_dir(cfg, seed)
        field_ids, assignments = _read_assignments(_require(out / "assignments.csv", "cluster"))
        if cfg.mapping_strategy == "low_ndvi":
            mapping = map_clusters(assignments, field_ids, cfg.alpha, strategy="low_ndvi",
                                   ndvi_means=cluster_ndvi_means(assignments, ndvi))
        else:
            mapping = map_clusters(assignments, field_ids, cfg.alpha, labels=labels,
                                   strategy="best_f1")
        stressed_cluster = next(c for c, name in mapping.items() if name == STRESSED)
        preds = aggregate(field_ids, assignments == stressed_cluster, cfg.alpha)
        write_predictions(preds, out / "predictions.csv")
        (out / "mapping.json").write_text(json.dumps({
            "strategy": cfg.mapping_strategy,
            "stressed_cluster": stressed_cluster,
            "alpha": cfg.alpha,
        }, indent=2) + "\n")
        n_stressed = sum(p.label == STRESSED for p in preds)
        print(f"seed {seed}: {n_stressed}/{len(preds)} fields predicted stressed")
    return 0


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    labels = _load_labels(cfg)
    per_seed = {}
    for seed in cfg.seeds:
        path = _require(seed_dir(cfg, seed) / "predictions.csv", "predict")
        per_seed[seed] = read_predictions(path)
    report = report_from_predictions(per_seed, labels, cfg)
    out = work_dir(cfg)
    write_report(report, out / "report.json")
    plots.plot_report(report, out / "report.png",
                      title=f"{cfg.method} {cfg.variant} alpha={cfg.alpha}")
    mean, std = report["mean"], report["std"]
    for name in ("accuracy", "f1"):
        print(f"{name}: {mean[name]:.4f} +/- {std[name]:.4f}")
    print(f"report: {out / 'report.json'}")
    return 0


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    labels = _load_labels(cfg)
    per_seed_rows = []
    for seed in cfg.seeds:
        out = seed_dir(cfg, seed)
        field_ids, assignments = _read_assignments(_require(out / "assignments.csv", "cluster"))
        mapping_doc = json.loads(_require(out / "mapping.json", "predict").read_text())
        stressed = assignments == mapping_doc["stressed_cluster"]
        rows = sweep_alpha(field_ids, stressed, labels, alphas=DEFAULT_ALPHAS)
        write_curves(rows, out / "curves.csv")
        plots.plot_curves(rows, out / "curves.png",
                          title=f"{cfg.method} {cfg.variant} seed {seed}")
        per_seed_rows.append(rows)
    mean_rows = []
    for i, alpha in enumerate(DEFAULT_ALPHAS):
        row = {"alpha": alpha}
        for name in ("precision", "recall", "f1"):
            row[name] = float(np.mean([rows[i][name] for rows in per_seed_rows]))
        mean_rows.append(row)
    root = work_dir(cfg)
    write_curves(mean_rows, root / "curves.csv")
    plots.plot_curves(mean_rows, root / "curves.png",
                      title=f"{cfg.method} {cfg.variant}, mean over seeds {cfg.seeds}")
    print(f"curves: {root / 'curves.csv'}")
    return 0


_COMPARE_ROWS = (
    ("raw", False),
    ("histogram", False),
    ("ae2d", False),
    ("ae3d", False),
    ("ae3d", True),
)


def cmd_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    tensors, index = _load_store(cfg)
    dates = store_dates(index)
    labels = _load_labels(cfg)
    table = []
    for method, encodings in _COMPARE_ROWS:
        row_cfg = dataclasses.replace(cfg, method=method, temporal_encodings=encodings)
        row_cfg.validate()
        report, _ = run_protocol(tensors, dates, index, labels, row_cfg)
        table.append({
            "method": method,
            "tensor": cfg.variant,
            "encodings": "yes" if encodings else "no",
            "alpha": cfg.alpha,
            "accuracy_pct": 100.0 * report["mean"]["accuracy"],
            "accuracy_sd_pct": 100.0 * report["std"]["accuracy"],
            "f1_pct": 100.0 * report["mean"]["f1"],
            "f1_sd_pct": 100.0 * report["std"]["f1"],
        })
        print(f"{method} (encodings={encodings}): "
              f"accuracy {table[-1]['accuracy_pct']:.2f}%, f1 {table[-1]['f1_pct']:.2f}%")
    out = work_dir(cfg) / "comparison.csv"
    with out.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "tensor", "encodings", "alpha",
                         "accuracy_pct", "accuracy_sd_pct", "f1_pct", "f1_sd_pct"])
        for row in table:
            writer.writerow([
                row["method"], row["tensor"], row["encodings"], f"{row['alpha']:.2f}",
                f"{row['accuracy_pct']:.2f}", f"{row['accuracy_sd_pct']:.2f}",
                f"{row['f1_pct']:.2f}", f"{row['f1_sd_pct']:.2f}",
            ])
    header = f"{'method':<10} {'tensor':<7} {'enc':<4} {'alpha':<6} {'accuracy %':<16} {'f1 %':<16}"
    print()
    print(header)
    print("-" * len(header))
    for row in table:
        acc = f"{row['accuracy_pct']:.2f} +/- {row['accuracy_sd_pct']:.2f}"
        f1 = f"{row['f1_pct']:.2f} +/- {row['f1_sd_pct']:.2f}"
        print(f"{row['method']:<10} {row['tensor']:<7} {row['encodings']:<4} "
              f"{row['alpha']:<6.2f} {acc:<16} {f1:<16}")
    print(f"\ncomparison: {out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _seed_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--variant", choices=("B10", "MVI", "B4"))
    parser.add_argument("--method", choices=("raw", "histogram", "ae2d", "ae3d"))
    parser.add_argument("--temporal-encodings", action=argparse.BooleanOptionalAction,
                        default=None)
    parser.add_argument("--encoding-mode", choices=("split", "sum"))
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--bins", type=int)
    parser.add_argument("--latent-dim", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--train-fraction", type=float)
    parser.add_argument("--restarts", type=int)
    parser.add_argument("--seeds", type=_seed_list)
    parser.add_argument("--mapping-strategy", choices=("best_f1", "low_ndvi"))
    parser.add_argument("--scenes-dir")
    parser.add_argument("--labels-path")
    parser.add_argument("--work-dir")


_OVERRIDE_KEYS = (
    "variant", "method", "temporal_encodings", "encoding_mode", "alpha", "bins",
    "latent_dim", "epochs", "batch_size", "learning_rate", "train_fraction",
    "restarts", "seeds", "mapping_strategy", "scenes_dir", "labels_path", "work_dir",
)


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for key in _OVERRIDE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if not cfg.work_dir:
        cfg.work_dir = os.environ.get("BEETSENSE_WORKDIR", "")
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beetsense",
        description="unsupervised stress detection on satellite image time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    _add_override_flags(p_synth)
    p_synth.add_argument("--out", help="output dataset directory (default: scenes_dir)")
    p_synth.add_argument("--num-scenes", type=int, default=8)
    p_synth.add_argument("--scene-size", type=int, default=96)
    p_synth.add_argument("--fields-per-scene", type=int, default=4)
    p_synth.add_argument("--stressed-fraction", type=float, default=0.4)
    p_synth.add_argument("--noise-sd", type=float, default=0.02)
    p_synth.add_argument("--cloud-probability", type=float, default=0.0)
    p_synth.add_argument("--instances-per-month", type=int, default=2)
    p_synth.add_argument("--synth-seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    for name, func, help_text in (
        ("preprocess", cmd_preprocess, "scenes to sub-patch store"),
        ("train", cmd_train, "train one autoencoder per seed"),
        ("features", cmd_features, "extract per-sub-patch features per seed"),
        ("cluster", cmd_cluster, "k-means (k=2) on features per seed"),
        ("predict", cmd_predict, "map clusters to classes and aggregate to fields"),
        ("evaluate", cmd_evaluate, "score predictions against labels, write report"),
        ("sweep", cmd_sweep, "precision/recall/F1 across alpha thresholds"),
        ("compare", cmd_compare, "run all methods and print the comparison matrix"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_override_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)  # bit-identical reruns regardless of machine load
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(cfg, args)
    except BeetsenseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
