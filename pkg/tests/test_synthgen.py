"""Synthetic scene generator: determinism, planted signal, calendar shape."""

import numpy as np
import pytest

from beetsense.errors import InvariantViolation
from beetsense.preprocess import VariantConfig, process_scene
from beetsense.scene_io import list_scene_dirs, load_labels, load_scene
from beetsense.synthgen import (
    BAND_NAMES,
    MONTH_WINDOWS,
    SynthConfig,
    _calendar,
    _growth,
    band_values,
    generate,
)

SMALL = SynthConfig(num_scenes=2, scene_size=64, fields_per_scene=3,
                    stressed_fraction=0.5, noise_sd=0.0,
                    cloud_probability=0.0, instances_per_month=2, seed=3)


def all_files(root):
    return sorted(p for p in root.rglob("*") if p.is_file())


# ---------------------------------------------------------------------------
# Determinism and config validation
# ---------------------------------------------------------------------------

def test_generate_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    summary_a = generate(SMALL, a)
    summary_b = generate(SMALL, b)
    assert summary_a["fields"] == summary_b["fields"]
    files_a, files_b = all_files(a), all_files(b)
    assert [p.relative_to(a) for p in files_a] == [p.relative_to(b) for p in files_b]
    for pa, pb in zip(files_a, files_b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_generate_seed_changes_output(tmp_path):
    import dataclasses
    a, b = tmp_path / "a", tmp_path / "b"
    generate(SMALL, a)
    generate(dataclasses.replace(SMALL, seed=4), b)
    data_a = (a / "scene000" / "data.f32").read_bytes()
    data_b = (b / "scene000" / "data.f32").read_bytes()
    assert data_a != data_b


def test_config_validation():
    import dataclasses
    for bad in (
        dataclasses.replace(SMALL, num_scenes=0),
        dataclasses.replace(SMALL, fields_per_scene=0),
        dataclasses.replace(SMALL, scene_size=31),
        dataclasses.replace(SMALL, stressed_fraction=1.5),
        dataclasses.replace(SMALL, cloud_probability=-0.1),
        dataclasses.replace(SMALL, noise_sd=-0.01),
        dataclasses.replace(SMALL, instances_per_month=1),
    ):
        with pytest.raises(InvariantViolation):
            bad.validate()


# ---------------------------------------------------------------------------
# Planted signal
# ---------------------------------------------------------------------------

def test_growth_endpoints():
    assert abs(float(_growth(0.0))) < 1e-15
    assert abs(float(_growth(1.0)) - 1.0) < 1e-15
    mid = float(_growth(0.5))
    assert 0.49 < mid < 0.51


def test_band_values_oracle():
    v = band_values(1.0, stressed_now=False, depth=0.2)
    by = dict(zip(BAND_NAMES, v))
    assert by["B08"] == pytest.approx(0.6, abs=1e-12)
    assert by["B04"] == pytest.approx(0.08, abs=1e-12)
    assert by["B02"] == pytest.approx(0.04, abs=1e-12)
    assert by["B11"] == pytest.approx(0.25, abs=1e-12)
    assert by["B03"] == pytest.approx(0.8 * 0.08 + 0.02, abs=1e-12)
    assert by["B8A"] == pytest.approx(0.95 * 0.6 + 0.01, abs=1e-12)
    stressed = dict(zip(BAND_NAMES, band_values(1.0, stressed_now=True, depth=0.2)))
    assert stressed["B08"] == pytest.approx(0.4, abs=1e-12)
    assert stressed["B11"] == pytest.approx(0.35, abs=1e-12)
    assert stressed["B04"] == by["B04"]


def test_healthy_last_instance_ndvi(tmp_path):
    import dataclasses
    out = tmp_path / "ds"
    generate(dataclasses.replace(SMALL, stressed_fraction=0.0), out)
    for scene_dir in list_scene_dirs(out):
        scene = load_scene(scene_dir)
        b04 = scene.data[-1, scene.manifest.band_names.index("B04")]
        b08 = scene.data[-1, scene.manifest.band_names.index("B08")]
        inside = scene.field_ids > 0
        ndvi = (b08[inside] - b04[inside]) / (b08[inside] + b04[inside])
        # healthy fields at season end: (0.6 - 0.08) / (0.6 + 0.08)
        assert np.allclose(ndvi, 0.52 / 0.68, atol=1e-4)


def test_stressed_fraction_extremes(tmp_path):
    import dataclasses
    out = tmp_path / "all_healthy"
    generate(dataclasses.replace(SMALL, stressed_fraction=0.0), out)
    labels = load_labels(out / "labels.csv")
    assert set(labels.entries.values()) == {"healthy"}
    out = tmp_path / "all_stressed"
    generate(dataclasses.replace(SMALL, stressed_fraction=1.0), out)
    labels = load_labels(out / "labels.csv")
    assert set(labels.entries.values()) == {"stressed"}


def test_ndvi_separates_classes_under_noise(tmp_path):
    import dataclasses
    cfg = dataclasses.replace(SMALL, num_scenes=4, stressed_fraction=0.5,
                              noise_sd=0.02, seed=9)
    out = tmp_path / "ds"
    generate(cfg, out)
    labels = load_labels(out / "labels.csv")
    per_field = {}
    for scene_dir in list_scene_dirs(out):
        scene = load_scene(scene_dir)
        b04 = scene.data[-1, scene.manifest.band_names.index("B04")]
        b08 = scene.data[-1, scene.manifest.band_names.index("B08")]
        ndvi = (b08 - b04) / (b08 + b04)
        for fid in np.unique(scene.field_ids):
            if fid == 0:
                continue
            per_field[int(fid)] = float(ndvi[scene.field_ids == fid].mean())
    healthy = [v for fid, v in per_field.items() if labels.entries[fid] == "healthy"]
    stressed = [v for fid, v in per_field.items() if labels.entries[fid] == "stressed"]
    assert healthy and stressed
    assert min(healthy) > max(stressed)


# ---------------------------------------------------------------------------
# Calendar and downstream compatibility
# ---------------------------------------------------------------------------

def test_calendar_windows():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for per_month in (2, 3):
            days = _calendar(rng, per_month)
            assert len(days) == 4 * per_month
            assert all(a < b for a, b in zip(days, days[1:]))
            for m, (lo, hi) in enumerate(MONTH_WINDOWS):
                for day in days[m * per_month:(m + 1) * per_month]:
                    assert lo <= day <= hi


def test_scene_manifest_dates_match_windows(tmp_path):
    out = tmp_path / "ds"
    generate(SMALL, out)
    for scene_dir in list_scene_dirs(out):
        scene = load_scene(scene_dir)
        days = scene.manifest.dates
        assert len(days) == 8
        assert 152 <= days[0] <= 181
        assert 244 <= days[-1] <= 273


def test_all_fields_survive_preprocessing(tmp_path):
    out = tmp_path / "ds"
    summary = generate(SMALL, out)
    labels = load_labels(out / "labels.csv")
    assert summary["fields"] == len(labels.entries)
    seen = set()
    for scene_dir in list_scene_dirs(out):
        scene = load_scene(scene_dir)
        cfg = VariantConfig.for_bands("B10", scene.manifest.band_names)
        subs, skipped = process_scene(scene, cfg)
        assert skipped == []
        seen.update(s.field_id for s in subs)
    assert seen == set(labels.entries)


def test_summary_counts(tmp_path):
    out = tmp_path / "ds"
    summary = generate(SMALL, out)
    labels = load_labels(out / "labels.csv")
    assert summary["fields"] == summary["stressed"] + summary["healthy"]
    assert summary["stressed"] == sum(
        1 for v in labels.entries.values() if v == "stressed"
    )
    assert sorted(labels.entries) == list(range(1, summary["fields"] + 1))
