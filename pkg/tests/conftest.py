"""Shared fixtures: a small deterministic synthetic dataset and its store."""

import numpy as np
import pytest
import torch

from beetsense.preprocess import VariantConfig, process_scene
from beetsense.scene_io import list_scene_dirs, load_labels, load_scene
from beetsense.synthgen import SynthConfig, generate

# single-threaded torch keeps runs bit-identical regardless of machine load
torch.set_num_threads(1)


TINY_SYNTH = SynthConfig(
    num_scenes=4,
    scene_size=64,
    fields_per_scene=3,
    stressed_fraction=0.5,
    noise_sd=0.01,
    cloud_probability=0.0,
    instances_per_month=2,
    seed=11,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """(dataset dir, generation summary) for a 4-scene, 12-field dataset."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    summary = generate(TINY_SYNTH, out)
    return out, summary


@pytest.fixture(scope="session")
def tiny_store(tiny_dataset):
    """In-memory B10 store over the tiny dataset: (tensors, index, labels)."""
    dataset_dir, _ = tiny_dataset
    subs = []
    channel_names = None
    for scene_dir in list_scene_dirs(dataset_dir):
        scene = load_scene(scene_dir)
        cfg = VariantConfig.for_bands("B10", scene.manifest.band_names)
        channel_names = cfg.channel_names()
        scene_subs, skipped = process_scene(scene, cfg)
        assert not skipped
        subs.extend(scene_subs)
    subs.sort(key=lambda s: (s.source_scene, s.field_id, s.grid_row, s.grid_col))
    tensors = np.stack([s.tensor for s in subs]).astype(np.float32)
    index = {
        "variant": "B10",
        "channels": tensors.shape[2],
        "channel_names": channel_names,
        "count": len(subs),
        "records": [
            {
                "scene_id": s.source_scene,
                "field_id": s.field_id,
                "grid_row": s.grid_row,
                "grid_col": s.grid_col,
                "dates": list(s.dates),
            }
            for s in subs
        ],
    }
    labels = load_labels(dataset_dir / "labels.csv")
    return tensors, index, labels
