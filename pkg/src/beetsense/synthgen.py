"""Synthetic labeled scenes with planted stress signatures.

Each scene holds rectangular fields over a uniform soil background, observed
on a jittered June-September calendar. Healthy fields follow a logistic
green-up: B08 rises 0.2 -> 0.6 while B04 falls 0.15 -> 0.08 over the scene's
season, with B11 flat at 0.25. Stressed fields switch after a per-field onset
day in [190, 230]: B08 drops by 0.15-0.25 and B11 rises by 0.1. The remaining
six bands are scaled copies of B04/B08/B11 so every tensor variant carries
signal. Clouds, when enabled, flag random half-planes on random instances.

Everything is driven by numpy Generators seeded from (config seed, scene
index), so output is byte-identical across re-runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvariantViolation
from .scene_io import LabelSet, Scene, SceneManifest, save_labels, save_scene

logger = logging.getLogger(__name__)

BAND_NAMES = ["B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B11", "B12"]

# month day-of-year windows used for the acquisition calendar
MONTH_WINDOWS = ((152, 181), (182, 212), (213, 243), (244, 273))

MIN_FIELD_SIDE = 10
MAX_FIELD_SIDE = 18

# per-band soil background reflectance, indexed like BAND_NAMES
_SOIL = np.array([0.06, 0.08, 0.10, 0.12, 0.14, 0.15, 0.17, 0.17, 0.22, 0.19])

_REFLECTANCE_FLOOR = 0.001


@dataclass
class SynthConfig:
    num_scenes: int = 8
    scene_size: int = 96
    fields_per_scene: int = 4
    stressed_fraction: float = 0.4
    noise_sd: float = 0.02
    cloud_probability: float = 0.0
    instances_per_month: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.num_scenes < 1 or self.fields_per_scene < 1:
            raise InvariantViolation("num_scenes and fields_per_scene must be positive")
        if self.scene_size < 32:
            raise InvariantViolation(f"scene_size must be >= 32, got {self.scene_size}")
        for name in ("stressed_fraction", "cloud_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvariantViolation(f"{name} must lie in [0, 1], got {value}")
        if self.noise_sd < 0.0:
            raise InvariantViolation(f"noise_sd must be non-negative, got {self.noise_sd}")
        if self.instances_per_month < 2:
            # preprocessing needs two usable instances per month June-August
            raise InvariantViolation(
                f"instances_per_month must be >= 2, got {self.instances_per_month}"
            )


def _calendar(rng: np.random.Generator, instances_per_month: int) -> list[int]:
    """Strictly increasing dates: one per equal slot of each month window."""
    days: list[int] = []
    for lo, hi in MONTH_WINDOWS:
        span = hi - lo + 1
        for s in range(instances_per_month):
            slot_lo = lo + s * span // instances_per_month
            slot_hi = lo + (s + 1) * span // instances_per_month - 1
            days.append(int(rng.integers(slot_lo, slot_hi + 1)))
    return days


def _growth(p: np.ndarray | float) -> np.ndarray | float:
    """Logistic green-up normalized so g(0) = 0 and g(1) = 1 exactly."""
    raw = 1.0 / (1.0 + np.exp(-8.0 * (np.asarray(p, dtype=np.float64) - 0.5)))
    lo = 1.0 / (1.0 + np.exp(4.0))
    hi = 1.0 / (1.0 + np.exp(-4.0))
    return (raw - lo) / (hi - lo)


def band_values(progress: float, stressed_now: bool, depth: float) -> np.ndarray:
    """All ten band reflectances for one (field, date)."""
    g = float(_growth(progress))
    b08 = 0.2 + 0.4 * g
    b04 = 0.15 - 0.07 * g
    b02 = 0.05 - 0.01 * g
    b11 = 0.25
    if stressed_now:
        b08 -= depth
        b11 += 0.1
    return np.array([
        b02,                  # B02
        0.8 * b04 + 0.02,     # B03
        b04,                  # B04
        0.9 * b04 + 0.03,     # B05
        0.6 * b08 + 0.02,     # B06
        0.8 * b08 + 0.02,     # B07
        b08,                  # B08
        0.95 * b08 + 0.01,    # B8A
        b11,                  # B11
        0.8 * b11 + 0.02,     # B12
    ])


def _place_fields(rng: np.random.Generator, size: int, count: int) -> list[tuple[int, int, int, int]]:
    """Non-overlapping axis-aligned rectangles (r0, r1, c0, c1), half-open.

    Rectangles keep one pixel of margin from the border and from each other.
    Placement is rejection sampling; if the scene fills up, fewer rectangles
    are returned.
    """
    occupied = np.zeros((size, size), dtype=bool)
    rects: list[tuple[int, int, int, int]] = []
    attempts = 0
    while len(rects) < count and attempts < 200 * count:
        attempts += 1
        height = int(rng.integers(MIN_FIELD_SIDE, MAX_FIELD_SIDE + 1))
        width = int(rng.integers(MIN_FIELD_SIDE, MAX_FIELD_SIDE + 1))
        r0 = int(rng.integers(1, size - height))
        c0 = int(rng.integers(1, size - width))
        r1, c1 = r0 + height, c0 + width
        if occupied[max(r0 - 1, 0):r1 + 1, max(c0 - 1, 0):c1 + 1].any():
            continue
        occupied[r0:r1, c0:c1] = True
        rects.append((r0, r1, c0, c1))
    return rects


def _cloud_mask(rng: np.random.Generator, num_timepoints: int, size: int,
                probability: float) -> np.ndarray:
    mask = np.zeros((num_timepoints, size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    for t in range(num_timepoints):
        if rng.random() >= probability:
            continue
        cy = rng.uniform(0.25, 0.75) * size
        cx = rng.uniform(0.25, 0.75) * size
        theta = rng.uniform(0.0, 2.0 * np.pi)
        side = (yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta) > 0.0
        mask[t][side] = 1
    return mask


def generate(cfg: SynthConfig, out_dir: str | Path) -> dict:
    """Write scenes plus labels.csv; returns a summary of what was planted."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    labels: dict[int, str] = {}
    next_field_id = 1
    num_timepoints = len(MONTH_WINDOWS) * cfg.instances_per_month
    for scene_idx in range(cfg.num_scenes):
        rng = np.random.default_rng([cfg.seed, scene_idx])
        dates = _calendar(rng, cfg.instances_per_month)
        rects = _place_fields(rng, cfg.scene_size, cfg.fields_per_scene)
        if len(rects) < cfg.fields_per_scene:
            logger.info("scene %d: placed %d of %d fields", scene_idx, len(rects),
                        cfg.fields_per_scene)

        data = np.empty((num_timepoints, len(BAND_NAMES), cfg.scene_size, cfg.scene_size),
                        dtype=np.float64)
        data[:] = _SOIL[None, :, None, None]
        field_ids = np.zeros((cfg.scene_size, cfg.scene_size), dtype=np.uint32)

        season = (dates[0], dates[-1])
        for rect in rects:
            field_id = next_field_id
            next_field_id += 1
            r0, r1, c0, c1 = rect
            field_ids[r0:r1, c0:c1] = field_id
            stressed = bool(rng.random() < cfg.stressed_fraction)
            onset = int(rng.integers(190, 231))
            depth = float(rng.uniform(0.15, 0.25))
            labels[field_id] = "stressed" if stressed else "healthy"
            for t, day in enumerate(dates):
                progress = (day - season[0]) / (season[1] - season[0])
                values = band_values(progress, stressed and day >= onset, depth)
                data[t, :, r0:r1, c0:c1] = values[:, None, None]

        if cfg.noise_sd > 0.0:
            data += rng.normal(0.0, cfg.noise_sd, size=data.shape)
        np.clip(data, _REFLECTANCE_FLOOR, 1.0, out=data)

        scene_id = f"scene{scene_idx:03d}"
        scene = Scene(
            manifest=SceneManifest(
                scene_id=scene_id,
                height=cfg.scene_size,
                width=cfg.scene_size,
                num_channels=len(BAND_NAMES),
                num_timepoints=num_timepoints,
                band_names=list(BAND_NAMES),
                dates=dates,
            ),
            data=data.astype(np.float32),
            cloud_mask=_cloud_mask(rng, num_timepoints, cfg.scene_size,
                                   cfg.cloud_probability),
            field_ids=field_ids,
        )
        save_scene(scene, out_dir / scene_id)

    save_labels(LabelSet(entries=labels), out_dir / "labels.csv")
    n_stressed = sum(1 for v in labels.values() if v == "stressed")
    return {
        "scenes": cfg.num_scenes,
        "fields": len(labels),
        "stressed": n_stressed,
        "healthy": len(labels) - n_stressed,
        "labels_path": str(out_dir / "labels.csv"),
    }
