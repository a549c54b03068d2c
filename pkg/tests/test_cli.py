"""End-to-end CLI runs through main() plus error-path behavior."""

import json

import pytest

from beetsense.cli import main
from beetsense.evaluation import DEFAULT_ALPHAS, read_report


def write_config(path, **overrides):
    payload = {
        "method": "raw",
        "temporal_encodings": False,
        "seeds": [0, 1],
        "epochs": 2,
        "batch_size": 64,
    }
    payload.update(overrides)
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Small synthetic dataset written through the synth subcommand."""
    root = tmp_path_factory.mktemp("cli_dataset")
    scenes = root / "scenes"
    config = write_config(root / "config.json")
    rc = main([
        "synth", "--config", str(config), "--out", str(scenes),
        "--num-scenes", "3", "--scene-size", "64", "--fields-per-scene", "3",
        "--stressed-fraction", "0.5", "--noise-sd", "0.01",
        "--synth-seed", "21",
    ])
    assert rc == 0
    return scenes


@pytest.fixture(scope="module")
def raw_run(dataset, tmp_path_factory):
    """Full raw-method chain: preprocess through sweep in one work dir."""
    work = tmp_path_factory.mktemp("cli_raw_work")
    config = write_config(
        work / "config.json",
        scenes_dir=str(dataset),
        labels_path=str(dataset / "labels.csv"),
        work_dir=str(work),
    )
    base = ["--config", str(config)]
    for step in ("preprocess", "features", "cluster", "predict", "evaluate", "sweep"):
        assert main([step] + base) == 0, step
    return work, config


def test_synth_outputs(dataset):
    assert (dataset / "labels.csv").exists()
    assert (dataset / "synth_config.json").exists()
    scene_dirs = sorted(p.name for p in dataset.iterdir() if p.is_dir())
    assert scene_dirs == ["scene000", "scene001", "scene002"]
    for name in scene_dirs:
        for artifact in ("manifest.json", "data.f32", "cloud_mask.u8", "field_ids.u32"):
            assert (dataset / name / artifact).exists()


def test_preprocess_outputs(raw_run):
    work, _ = raw_run
    assert (work / "store_B10.f32").exists()
    assert (work / "store_B10.index.json").exists()
    summary = json.loads((work / "preprocess_summary.json").read_text())
    assert summary["variant"] == "B10"
    assert summary["scenes"] == 3
    assert summary["skipped"] == []
    assert summary["subpatches"] > 0


def test_per_seed_artifacts(raw_run):
    work, _ = raw_run
    for seed in (0, 1):
        seed_out = work / f"seed{seed}"
        for name in ("features.f32", "features.json", "kmeans.json",
                     "assignments.csv", "predictions.csv", "mapping.json",
                     "curves.csv", "curves.png"):
            assert (seed_out / name).exists(), f"seed{seed}/{name}"
        mapping = json.loads((seed_out / "mapping.json").read_text())
        assert mapping["strategy"] == "best_f1"
        assert mapping["stressed_cluster"] in (0, 1)
        assert mapping["alpha"] == 0.5


def test_report_contents(raw_run):
    work, _ = raw_run
    report = read_report(work / "report.json")
    assert report["seeds"] == [0, 1]
    assert len(report["per_seed"]) == 2
    assert set(report["mean"]) == {"accuracy", "precision", "recall", "f1"}
    assert (work / "report.png").exists()
    # planted signal is easy for raw features on clean data
    assert report["mean"]["f1"] > 0.8


def test_sweep_outputs(raw_run):
    work, _ = raw_run
    lines = (work / "curves.csv").read_text().strip().split("\n")
    assert lines[0].rstrip("\r") == "alpha,precision,recall,f1"
    assert len(lines) == 1 + len(DEFAULT_ALPHAS)
    assert (work / "curves.png").exists()


def test_rerun_is_byte_identical(raw_run):
    work, config = raw_run
    base = ["--config", str(config)]
    before = {
        name: (work / name).read_bytes()
        for name in ("report.json", "curves.csv", "seed0/predictions.csv",
                     "seed0/assignments.csv", "seed1/predictions.csv")
    }
    for step in ("features", "cluster", "predict", "evaluate", "sweep"):
        assert main([step] + base) == 0
    for name, payload in before.items():
        assert (work / name).read_bytes() == payload, name


def test_autoencoder_chain(dataset, tmp_path):
    work = tmp_path / "work"
    config = write_config(
        tmp_path / "config.json",
        method="ae3d",
        temporal_encodings=True,
        seeds=[0],
        epochs=2,
        scenes_dir=str(dataset),
        labels_path=str(dataset / "labels.csv"),
        work_dir=str(work),
    )
    base = ["--config", str(config)]
    for step in ("preprocess", "train", "features", "cluster", "predict", "evaluate"):
        assert main([step] + base) == 0, step
    seed_out = work / "seed0"
    assert (seed_out / "model.pt").exists()
    sidecar = json.loads((seed_out / "model.json").read_text())
    assert sidecar["method"] == "ae3d"
    assert sidecar["temporal_encodings"] is True
    history = json.loads((seed_out / "history.json").read_text())
    assert len(history) == 2
    assert (seed_out / "loss.png").exists()
    assert (work / "report.json").exists()


def test_train_skips_baseline_methods(raw_run, capsys):
    _, config = raw_run
    assert main(["train", "--config", str(config)]) == 0
    assert "needs no training" in capsys.readouterr().out


def test_missing_artifact_errors(dataset, tmp_path, capsys):
    work = tmp_path / "work"
    config = write_config(
        tmp_path / "config.json",
        scenes_dir=str(dataset),
        labels_path=str(dataset / "labels.csv"),
        work_dir=str(work),
    )
    rc = main(["cluster", "--config", str(config)])
    err = capsys.readouterr().err
    assert rc == 1
    assert "MissingArtifact" in err
    assert "beetsense features" in err
    rc = main(["evaluate", "--config", str(config)])
    err = capsys.readouterr().err
    assert rc == 1
    assert "beetsense predict" in err


def test_config_invalid_exit_code(dataset, tmp_path, capsys):
    config = write_config(
        tmp_path / "config.json",
        method="ae2d",
        temporal_encodings=True,
        work_dir=str(tmp_path / "work"),
    )
    rc = main(["preprocess", "--config", str(config)])
    err = capsys.readouterr().err
    assert rc == 1
    assert "ConfigInvalid" in err


def test_missing_work_dir_rejected(dataset, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("BEETSENSE_WORKDIR", raising=False)
    config = write_config(tmp_path / "config.json", scenes_dir=str(dataset))
    rc = main(["preprocess", "--config", str(config)])
    assert rc == 1
    assert "work directory" in capsys.readouterr().err


def test_workdir_env_fallback(dataset, tmp_path, monkeypatch):
    work = tmp_path / "env_work"
    monkeypatch.setenv("BEETSENSE_WORKDIR", str(work))
    config = write_config(
        tmp_path / "config.json",
        scenes_dir=str(dataset),
        labels_path=str(dataset / "labels.csv"),
    )
    assert main(["preprocess", "--config", str(config)]) == 0
    assert (work / "store_B10.f32").exists()


def test_flag_overrides(raw_run, tmp_path):
    work, config = raw_run
    assert main(["predict", "--config", str(config), "--alpha", "0.9"]) == 0
    mapping = json.loads((work / "seed0" / "mapping.json").read_text())
    assert mapping["alpha"] == 0.9
    # restore the fixture's alpha for any later test
    assert main(["predict", "--config", str(config)]) == 0


def test_compare_smoke(dataset, tmp_path, capsys):
    work = tmp_path / "work"
    config = write_config(
        tmp_path / "config.json",
        method="ae3d",
        temporal_encodings=True,
        seeds=[0],
        epochs=2,
        scenes_dir=str(dataset),
        labels_path=str(dataset / "labels.csv"),
        work_dir=str(work),
    )
    base = ["--config", str(config)]
    assert main(["preprocess"] + base) == 0
    assert main(["compare"] + base) == 0
    out = capsys.readouterr().out
    lines = (work / "comparison.csv").read_text().strip().split("\n")
    assert lines[0].rstrip("\r").startswith("method,tensor,encodings,alpha")
    assert len(lines) == 6  # header + 5 method rows
    methods = [line.split(",")[0] for line in lines[1:]]
    assert methods == ["raw", "histogram", "ae2d", "ae3d", "ae3d"]
    assert "accuracy %" in out
