"""On-disk scene format: load, validate and write scenes, masks, dates, labels.

A scene directory contains four files:

    manifest.json   scene metadata (see SceneManifest)
    data.f32        reflectance, float32 little-endian, layout [T][C][H][W]
    cloud_mask.u8   {0,1} per pixel, layout [T][H][W] (1 = cloudy)
    field_ids.u32   uint32 little-endian, layout [H][W] (0 = background)

All binary files are headerless raw arrays in row-major order. Field labels
live in a separate CSV with header ``field_id,label``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateField,
    InvalidManifest,
    InvariantViolation,
    IoFailure,
    MissingFile,
    ShapeMismatch,
    UnknownLabelToken,
)

VALUE_DTYPE_TOKEN = "float32-le"
LABELS = ("stressed", "healthy")

_DATA_FILE = "data.f32"
_CLOUD_FILE = "cloud_mask.u8"
_FIELD_FILE = "field_ids.u32"
_MANIFEST_FILE = "manifest.json"


@dataclass
class SceneManifest:
    scene_id: str
    height: int
    width: int
    num_channels: int
    num_timepoints: int
    band_names: list[str]
    dates: list[int]
    value_dtype: str = VALUE_DTYPE_TOKEN

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise InvalidManifest(f"non-positive spatial dims ({self.height}, {self.width})")
        if self.num_channels <= 0 or self.num_timepoints <= 0:
            raise InvalidManifest("num_channels and num_timepoints must be positive")
        if len(self.band_names) != self.num_channels:
            raise InvalidManifest(
                f"{len(self.band_names)} band names for {self.num_channels} channels"
            )
        if len(self.dates) != self.num_timepoints:
            raise InvalidManifest(
                f"{len(self.dates)} dates for {self.num_timepoints} timepoints"
            )
        if any(d < 1 or d > 365 for d in self.dates):
            raise InvalidManifest(f"dates outside [1, 365]: {self.dates}")
        if any(b >= a for b, a in zip(self.dates, self.dates[1:])):
            raise InvalidManifest(f"dates not strictly increasing: {self.dates}")
        if self.value_dtype != VALUE_DTYPE_TOKEN:
            raise InvalidManifest(f"unsupported value_dtype {self.value_dtype!r}")


@dataclass
class Scene:
    """One multi-band temporal raster with its auxiliary masks."""

    manifest: SceneManifest
    data: np.ndarray        # (T, C, H, W) float32
    cloud_mask: np.ndarray  # (T, H, W) uint8
    field_ids: np.ndarray   # (H, W) uint32

    def validate(self) -> None:
        m = self.manifest
        m.validate()
        t, c, h, w = m.num_timepoints, m.num_channels, m.height, m.width
        if self.data.shape != (t, c, h, w):
            raise InvariantViolation(f"data shape {self.data.shape}, expected {(t, c, h, w)}")
        if self.cloud_mask.shape != (t, h, w):
            raise InvariantViolation(
                f"cloud_mask shape {self.cloud_mask.shape}, expected {(t, h, w)}"
            )
        if self.field_ids.shape != (h, w):
            raise InvariantViolation(
                f"field_ids shape {self.field_ids.shape}, expected {(h, w)}"
            )
        if not np.isfinite(self.data).all():
            raise InvariantViolation("reflectance contains NaN or Inf")
        if self.cloud_mask.max(initial=0) > 1:
            raise InvariantViolation("cloud_mask values must be 0 or 1")

    def field_id_values(self) -> list[int]:
        """Sorted positive field identifiers present in the scene."""
        ids = np.unique(self.field_ids)
        return [int(i) for i in ids if i > 0]


@dataclass
class LabelSet:
    """Ground-truth field labels, field_id -> 'stressed' | 'healthy'."""

    entries: dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)


def _read_raw(path: Path, dtype: str, shape: tuple[int, ...]) -> np.ndarray:
    if not path.is_file():
        raise MissingFile(str(path))
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise ShapeMismatch(
            f"{path.name}: {actual} bytes on disk, expected {expected} for shape {shape}"
        )
    return np.fromfile(path, dtype=dtype).reshape(shape)


def load_scene(scene_dir: str | Path) -> Scene:
    """Load and validate one scene directory."""
    scene_dir = Path(scene_dir)
    manifest_path = scene_dir / _MANIFEST_FILE
    if not manifest_path.is_file():
        raise MissingFile(str(manifest_path))
    try:
        raw = json.loads(manifest_path.read_text())
        manifest = SceneManifest(
            scene_id=raw["scene_id"],
            height=int(raw["height"]),
            width=int(raw["width"]),
            num_channels=int(raw["num_channels"]),
            num_timepoints=int(raw["num_timepoints"]),
            band_names=list(raw["band_names"]),
            dates=[int(d) for d in raw["dates"]],
            value_dtype=raw["value_dtype"],
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InvalidManifest(f"{manifest_path}: {exc}") from exc
    manifest.validate()

    t, c, h, w = manifest.num_timepoints, manifest.num_channels, manifest.height, manifest.width
    scene = Scene(
        manifest=manifest,
        data=_read_raw(scene_dir / _DATA_FILE, "<f4", (t, c, h, w)),
        cloud_mask=_read_raw(scene_dir / _CLOUD_FILE, "u1", (t, h, w)),
        field_ids=_read_raw(scene_dir / _FIELD_FILE, "<u4", (h, w)),
    )
    scene.validate()
    return scene


def save_scene(scene: Scene, scene_dir: str | Path) -> None:
    """Write a scene so that load_scene(save_scene(s)) round-trips bit-exactly.

    Invariants are checked before anything is written.
    """
    scene.validate()
    scene_dir = Path(scene_dir)
    try:
        scene_dir.mkdir(parents=True, exist_ok=True)
        m = scene.manifest
        manifest_doc = {
            "scene_id": m.scene_id,
            "height": m.height,
            "width": m.width,
            "num_channels": m.num_channels,
            "num_timepoints": m.num_timepoints,
            "band_names": m.band_names,
            "dates": m.dates,
            "value_dtype": m.value_dtype,
        }
        (scene_dir / _MANIFEST_FILE).write_text(json.dumps(manifest_doc, indent=2) + "\n")
        scene.data.astype("<f4", copy=False).tofile(scene_dir / _DATA_FILE)
        scene.cloud_mask.astype("u1", copy=False).tofile(scene_dir / _CLOUD_FILE)
        scene.field_ids.astype("<u4", copy=False).tofile(scene_dir / _FIELD_FILE)
    except OSError as exc:
        raise IoFailure(f"writing {scene_dir}: {exc}") from exc


def load_labels(path: str | Path) -> LabelSet:
    """Read a labels CSV (header ``field_id,label``) into a LabelSet."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    entries: dict[int, str] = {}
    with path.open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["field_id", "label"]:
            raise InvalidManifest(f"{path}: expected header field_id,label, got {header}")
        for row in reader:
            if not row:
                continue
            field_id = int(row[0])
            label = row[1].strip()
            if field_id <= 0:
                raise InvalidManifest(f"{path}: non-positive field_id {field_id}")
            if label not in LABELS:
                raise UnknownLabelToken(f"{path}: unknown label {label!r} for field {field_id}")
            if field_id in entries:
                raise DuplicateField(f"{path}: duplicate field_id {field_id}")
            entries[field_id] = label
    return LabelSet(entries=entries)


def save_labels(labels: LabelSet, path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["field_id", "label"])
            for field_id in sorted(labels.entries):
                writer.writerow([field_id, labels.entries[field_id]])
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc


def list_scene_dirs(dataset_dir: str | Path) -> list[Path]:
    """Scene subdirectories of a dataset root, sorted by name."""
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise MissingFile(str(dataset_dir))
    return sorted(p for p in dataset_dir.iterdir() if (p / _MANIFEST_FILE).is_file())
