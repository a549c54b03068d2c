"""Raw scenes to model-ready sub-patch tensors.

Per field: binarize the field-ID mask, erode one pixel of border, drop
temporal instances with any cloud over the eroded mask, pick seven instances
(two per month June-August, earliest September), crop and zero-pad to 64x64,
split into non-overlapping 4x4 sub-patches, discard empty ones and fill
partially empty ones with the per-(timepoint, channel) field-pixel mean.
Tensor variants select bands (B10, B4) or replace them with vegetation
indices (MVI).

Sub-patch stores are one headerless float32-le file of (7, C, 4, 4) records
plus an ``.index.json`` sidecar with per-record provenance, sorted by
(scene_id, field_id, grid_row, grid_col).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyAfterErosion,
    FieldNotFound,
    FieldTooLarge,
    InsufficientCloudFreeInstances,
    MissingBand,
    MissingFile,
    ShapeMismatch,
)
from .scene_io import Scene

logger = logging.getLogger(__name__)

PATCH_SIZE = 64
SUBPATCH_SIZE = 4
GRID = PATCH_SIZE // SUBPATCH_SIZE  # 16x16 sub-patch grid
NUM_TIMEPOINTS = 7

# day-of-year windows, non-leap calendar
JUNE = (152, 181)
JULY = (182, 212)
AUGUST = (213, 243)
SEPTEMBER_START = 244

VARIANTS = ("B10", "MVI", "B4")
INDEX_BANDS = ("B02", "B04", "B08", "B11")
MVI_CHANNELS = ("NDVI", "EVI", "MSI")

_DENOM_EPS = 1e-9


@dataclass
class FieldPatch:
    """One field's masked, eroded, zero-padded (7, C, 64, 64) tensor."""

    field_id: int
    tensor: np.ndarray      # (7, C, 64, 64) float32
    field_mask: np.ndarray  # (64, 64) uint8, post-erosion
    dates: list[int]
    source_scene: str


@dataclass
class SubPatchTensor:
    """A (7, C, 4, 4) model input unit with field and grid provenance."""

    field_id: int
    grid_row: int
    grid_col: int
    tensor: np.ndarray
    dates: list[int]
    variant: str
    source_scene: str = ""


@dataclass
class VariantConfig:
    variant: str
    band_index: dict[str, int]

    @classmethod
    def for_bands(cls, variant: str, band_names: list[str]) -> "VariantConfig":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        cfg = cls(variant=variant, band_index={b: i for i, b in enumerate(band_names)})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.variant == "B10":
            if len(self.band_index) != 10:
                raise MissingBand(
                    f"B10 variant requires 10 named bands, got {len(self.band_index)}"
                )
        else:
            missing = [b for b in INDEX_BANDS if b not in self.band_index]
            if missing:
                raise MissingBand(f"{self.variant} variant requires bands {missing}")

    def channel_names(self) -> list[str]:
        if self.variant == "MVI":
            return list(MVI_CHANNELS)
        if self.variant == "B4":
            return list(INDEX_BANDS)
        ordered = sorted(self.band_index.items(), key=lambda kv: kv[1])
        return [name for name, _ in ordered]


def binarize_and_erode(field_ids: np.ndarray, field_id: int) -> np.ndarray:
    """Binary mask of one field, eroded by one pass of a 3x3 structuring element.

    A pixel survives iff itself and all 8 neighbors belong to the field;
    image-boundary pixels never survive.
    """
    mask = field_ids == field_id
    if not mask.any():
        raise FieldNotFound(f"field_id {field_id} not present")
    eroded = ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool), border_value=0)
    return eroded.astype(np.uint8)


def usable_instances(scene: Scene, eroded_mask: np.ndarray) -> np.ndarray:
    """Per-timepoint usability: True iff no cloudy pixel touches the eroded mask."""
    mask = eroded_mask.astype(bool)
    return np.array(
        [not (scene.cloud_mask[t].astype(bool) & mask).any() for t in range(scene.cloud_mask.shape[0])]
    )


def select_temporal_instances(dates, usable) -> list[int]:
    """Pick 7 instance indices: earliest+latest usable per month June-August,
    plus the earliest usable September instance (day-of-year >= 244)."""
    dates = list(dates)
    usable = list(usable)
    if len(dates) != len(usable):
        raise ShapeMismatch(f"{len(dates)} dates vs {len(usable)} usability flags")
    selected: list[int] = []
    for name, (lo, hi) in (("June", JUNE), ("July", JULY), ("August", AUGUST)):
        in_month = [i for i, d in enumerate(dates) if lo <= d <= hi and usable[i]]
        if len(in_month) < 2:
            raise InsufficientCloudFreeInstances(
                f"{name}: {len(in_month)} usable instance(s), need 2"
            )
        selected.extend([in_month[0], in_month[-1]])
    september = [i for i, d in enumerate(dates) if d >= SEPTEMBER_START and usable[i]]
    if not september:
        raise InsufficientCloudFreeInstances("no usable instance from September onward")
    selected.append(september[0])
    return selected


def extract_field_patch(scene: Scene, field_id: int, selected: list[int]) -> FieldPatch:
    """Crop the eroded-mask bounding box at the selected instances, zero all
    non-field pixels, and zero-pad symmetrically to 64x64 (extra row/col at
    bottom/right when the total pad is odd)."""
    eroded = binarize_and_erode(scene.field_ids, field_id)
    if not eroded.any():
        raise EmptyAfterErosion(f"field {field_id} empty after border erosion")
    rows = np.flatnonzero(eroded.any(axis=1))
    cols = np.flatnonzero(eroded.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    height, width = r1 - r0, c1 - c0
    if height > PATCH_SIZE or width > PATCH_SIZE:
        raise FieldTooLarge(
            f"field {field_id} bounding box {height}x{width} exceeds {PATCH_SIZE}"
        )

    crop = scene.data[selected][:, :, r0:r1, c0:c1].astype(np.float32)
    mask_crop = eroded[r0:r1, c0:c1].astype(bool)
    crop[:, :, ~mask_crop] = 0.0

    pad_top = (PATCH_SIZE - height) // 2
    pad_bottom = PATCH_SIZE - height - pad_top
    pad_left = (PATCH_SIZE - width) // 2
    pad_right = PATCH_SIZE - width - pad_left
    tensor = np.pad(crop, ((0, 0), (0, 0), (pad_top, pad_bottom), (pad_left, pad_right)))
    field_mask = np.pad(
        mask_crop.astype(np.uint8), ((pad_top, pad_bottom), (pad_left, pad_right))
    )
    return FieldPatch(
        field_id=int(field_id),
        tensor=tensor,
        field_mask=field_mask,
        dates=[int(scene.manifest.dates[i]) for i in selected],
        source_scene=scene.manifest.scene_id,
    )


def subdivide(patch: FieldPatch) -> list[SubPatchTensor]:
    """Split a field patch into the 16x16 grid of 4x4 sub-patches.

    Blocks with no field pixels are discarded; partially covered blocks have
    every empty position, per timepoint and channel, replaced by the mean over
    that block's field pixels at the same (timepoint, channel).
    """
    mask = patch.field_mask.astype(bool)
    subs: list[SubPatchTensor] = []
    for gr in range(GRID):
        for gc in range(GRID):
            r, c = gr * SUBPATCH_SIZE, gc * SUBPATCH_SIZE
            block_mask = mask[r:r + SUBPATCH_SIZE, c:c + SUBPATCH_SIZE]
            n_field = int(block_mask.sum())
            if n_field == 0:
                continue
            block = patch.tensor[:, :, r:r + SUBPATCH_SIZE, c:c + SUBPATCH_SIZE].copy()
            if n_field < SUBPATCH_SIZE * SUBPATCH_SIZE:
                fill = block[:, :, block_mask].mean(axis=2)
                block[:, :, ~block_mask] = fill[:, :, None]
            subs.append(
                SubPatchTensor(
                    field_id=patch.field_id,
                    grid_row=gr,
                    grid_col=gc,
                    tensor=block,
                    dates=list(patch.dates),
                    variant="B10",
                    source_scene=patch.source_scene,
                )
            )
    return subs


def _guarded_divide(numerator: np.ndarray, denominator: np.ndarray, name: str) -> np.ndarray:
    degenerate = np.abs(denominator) < _DENOM_EPS
    n_bad = int(np.count_nonzero(degenerate))
    if n_bad:
        logger.warning("DegenerateDenominator: %d %s denominator(s) below %.0e, index set to 0",
                       n_bad, name, _DENOM_EPS)
    out = np.divide(numerator, denominator, out=np.zeros_like(numerator, dtype=np.float64),
                    where=~degenerate)
    return out


def compute_indices(b02, b04, b08, b11):
    """NDVI, EVI and MSI from the four driving bands.

    Accepts scalars or arrays (broadcast together); degenerate denominators
    (|den| < 1e-9) yield 0 instead of NaN/Inf.
    """
    b02, b04, b08, b11 = np.broadcast_arrays(
        *(np.asarray(b, dtype=np.float64) for b in (b02, b04, b08, b11))
    )
    ndvi = _guarded_divide(b08 - b04, b08 + b04, "NDVI")
    evi = _guarded_divide(2.5 * (b08 - b04), b08 + 6.0 * b04 - 7.5 * b02 + 1.0, "EVI")
    msi = _guarded_divide(b11.astype(np.float64), b08.astype(np.float64), "MSI")
    if ndvi.ndim == 0:
        return float(ndvi), float(evi), float(msi)
    return ndvi, evi, msi


def to_variant(sub: SubPatchTensor, cfg: VariantConfig) -> SubPatchTensor:
    """Convert a full-band sub-patch to the configured tensor variant."""
    cfg.validate()
    if cfg.variant == "B10":
        if sub.tensor.shape[1] != 10:
            raise MissingBand(
                f"B10 variant expects 10 channels, sub-patch has {sub.tensor.shape[1]}"
            )
        return sub
    idx = [cfg.band_index[b] for b in INDEX_BANDS]
    b02, b04, b08, b11 = (sub.tensor[:, i] for i in idx)
    if cfg.variant == "B4":
        tensor = np.stack([b02, b04, b08, b11], axis=1)
    else:
        ndvi, evi, msi = compute_indices(b02, b04, b08, b11)
        tensor = np.stack([ndvi, evi, msi], axis=1).astype(np.float32)
    return SubPatchTensor(
        field_id=sub.field_id,
        grid_row=sub.grid_row,
        grid_col=sub.grid_col,
        tensor=np.ascontiguousarray(tensor, dtype=np.float32),
        dates=list(sub.dates),
        variant=cfg.variant,
        source_scene=sub.source_scene,
    )


def process_scene(scene: Scene, cfg: VariantConfig) -> tuple[list[SubPatchTensor], list[tuple[int, str]]]:
    """Run the full per-field pipeline over one scene.

    Returns (sub-patches, skipped) where skipped lists (field_id, reason) for
    fields dropped by cloud cover, erosion, or size limits.
    """
    subs: list[SubPatchTensor] = []
    skipped: list[tuple[int, str]] = []
    for field_id in scene.field_id_values():
        try:
            eroded = binarize_and_erode(scene.field_ids, field_id)
            if not eroded.any():
                raise EmptyAfterErosion(f"field {field_id} empty after border erosion")
            usable = usable_instances(scene, eroded)
            selected = select_temporal_instances(scene.manifest.dates, usable)
            patch = extract_field_patch(scene, field_id, selected)
        except (InsufficientCloudFreeInstances, EmptyAfterErosion, FieldTooLarge) as exc:
            logger.info("skipping field %d in %s: %s", field_id, scene.manifest.scene_id, exc)
            skipped.append((field_id, str(exc)))
            continue
        subs.extend(to_variant(s, cfg) for s in subdivide(patch))
    return subs, skipped


# ---------------------------------------------------------------------------
# Sub-patch store
# ---------------------------------------------------------------------------

def store_paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return prefix.with_suffix(".f32"), prefix.with_suffix(".index.json")


def write_store(subs: list[SubPatchTensor], prefix: str | Path,
                channel_names: list[str] | None = None) -> None:
    """Write sub-patches, sorted by (scene_id, field_id, grid_row, grid_col)."""
    subs = sorted(subs, key=lambda s: (s.source_scene, s.field_id, s.grid_row, s.grid_col))
    data_path, index_path = store_paths(prefix)
    data_path.parent.mkdir(parents=True, exist_ok=True)
    variant = subs[0].variant if subs else "B10"
    channels = int(subs[0].tensor.shape[1]) if subs else 0
    stacked = (
        np.stack([s.tensor for s in subs]).astype("<f4")
        if subs else np.zeros((0,), dtype="<f4")
    )
    stacked.tofile(data_path)
    index = {
        "variant": variant,
        "channels": channels,
        "channel_names": channel_names or [],
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
    index_path.write_text(json.dumps(index, indent=2) + "\n")


def load_store(prefix: str | Path) -> tuple[np.ndarray, dict]:
    """Load a sub-patch store as ((N, 7, C, 4, 4) float32, index dict)."""
    data_path, index_path = store_paths(prefix)
    if not index_path.is_file():
        raise MissingFile(str(index_path))
    if not data_path.is_file():
        raise MissingFile(str(data_path))
    index = json.loads(index_path.read_text())
    n, c = index["count"], index["channels"]
    shape = (n, NUM_TIMEPOINTS, c, SUBPATCH_SIZE, SUBPATCH_SIZE)
    expected = int(np.prod(shape)) * 4
    actual = data_path.stat().st_size
    if actual != expected:
        raise ShapeMismatch(
            f"{data_path.name}: {actual} bytes on disk, expected {expected} for {n} records"
        )
    tensors = np.fromfile(data_path, dtype="<f4").reshape(shape)
    return tensors, index


def store_dates(index: dict) -> np.ndarray:
    """Per-record acquisition dates as an (N, 7) int array."""
    return np.array([rec["dates"] for rec in index["records"]], dtype=np.int64)


def store_field_ids(index: dict) -> np.ndarray:
    return np.array([rec["field_id"] for rec in index["records"]], dtype=np.int64)
