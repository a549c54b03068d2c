"""Non-autoencoder feature sets: raw flattened tensors and histogram features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import SubPatchTensor

DEFAULT_BINS = 16


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (N, D) float
    provenance: list[tuple[int, int, int]]  # (field_id, grid_row, grid_col) per row
    method: str


def raw_features(sub: SubPatchTensor) -> np.ndarray:
    """Flatten a sub-patch in fixed [t][c][h][w] order (B10: 7*10*16 = 1120 dims)."""
    return np.ascontiguousarray(sub.tensor, dtype=np.float32).reshape(-1)


def histogram_features(sub: SubPatchTensor, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Per-channel value histogram pooled across all timepoints and pixels.

    Values are binned over [0, 1) with index min(floor(v*bins), bins-1);
    negative values clamp to bin 0 and values >= 1 to the last bin. Each
    channel's counts are normalized to sum to 1, then concatenated.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    tensor = np.asarray(sub.tensor, dtype=np.float64)
    t, c = tensor.shape[0], tensor.shape[1]
    pooled = tensor.transpose(1, 0, 2, 3).reshape(c, -1)  # (C, 7*16)
    idx = np.clip(np.floor(pooled * bins).astype(np.int64), 0, bins - 1)
    out = np.zeros((c, bins), dtype=np.float64)
    for ch in range(c):
        counts = np.bincount(idx[ch], minlength=bins).astype(np.float64)
        out[ch] = counts / counts.sum()
    return out.reshape(-1)


def raw_feature_matrix(tensors: np.ndarray, provenance: list[tuple[int, int, int]]) -> FeatureMatrix:
    values = np.ascontiguousarray(tensors, dtype=np.float32).reshape(tensors.shape[0], -1)
    return FeatureMatrix(values=values, provenance=list(provenance), method="raw")


def histogram_feature_matrix(tensors: np.ndarray, provenance: list[tuple[int, int, int]],
                             bins: int = DEFAULT_BINS) -> FeatureMatrix:
    rows = []
    for tensor in tensors:
        sub = SubPatchTensor(field_id=0, grid_row=0, grid_col=0, tensor=tensor,
                             dates=[], variant="B10")
        rows.append(histogram_features(sub, bins=bins))
    values = np.asarray(rows, dtype=np.float32) if rows else np.zeros((0, 0), dtype=np.float32)
    return FeatureMatrix(values=values, provenance=list(provenance), method="histogram")
