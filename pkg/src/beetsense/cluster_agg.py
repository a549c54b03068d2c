"""k-means clustering into two clusters, cluster-to-class mapping, and
sub-patch to field aggregation with the threshold alpha.

kmeans_fit runs Lloyd's algorithm with k-means++ seeding, at most 300
iterations, convergence when the largest centroid shift drops below 1e-4,
and keeps the best of ``restarts`` seeded restarts (per-restart seed =
seed + restart index, ties broken by restart index). A field is labeled
stressed iff its stressed sub-patch fraction strictly exceeds alpha.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyField, MissingLabels, MissingNdvi, TooFewPoints
from .scene_io import LabelSet

MAX_ITER = 300
SHIFT_TOL = 1e-4
DEFAULT_RESTARTS = 10

# instances this small get an exact 2-partition sweep on top of the restarts:
# k-means++ restarts alone cannot guarantee the optimum (all ten can land in
# one basin), and tiny inputs must cluster optimally
EXHAUSTIVE_N = 8

STRESSED, HEALTHY = "stressed", "healthy"


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, D)
    seed: int
    inertia: float


@dataclass
class FieldPrediction:
    field_id: int
    stressed_fraction: float
    label: str
    n_subpatches: int


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _squared_distances(points: np.ndarray, centroids: np.ndarray,
                       chunk: int = 2048) -> np.ndarray:
    out = np.empty((points.shape[0], centroids.shape[0]), dtype=np.float64)
    for start in range(0, points.shape[0], chunk):
        diff = points[start:start + chunk, None, :] - centroids[None, :, :]
        out[start:start + chunk] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    for _ in range(MAX_ITER):
        d2 = _squared_distances(points, centroids)
        assignment = d2.argmin(axis=1)
        new_centroids = centroids.copy()
        for j in range(centroids.shape[0]):
            members = points[assignment == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                # deterministic rescue: move the empty centroid onto the point
                # farthest from its current assignment
                farthest = int(d2[np.arange(len(points)), assignment].argmax())
                new_centroids[j] = points[farthest]
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < SHIFT_TOL:
            break
    d2 = _squared_distances(points, centroids)
    inertia = float(d2.min(axis=1).sum())
    return centroids, inertia


def _exhaustive_two_partition(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact optimal 2-partition by enumerating every nonempty bipartition."""
    n = points.shape[0]
    best_inertia, best_centroids = np.inf, None
    for bits in range(1, 2 ** n - 1):
        member = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        a, b = points[member], points[~member]
        ca, cb = a.mean(axis=0), b.mean(axis=0)
        inertia = float(((a - ca) ** 2).sum() + ((b - cb) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_centroids = np.stack([ca, cb])
    return best_inertia, best_centroids


def kmeans_fit(features: np.ndarray, k: int = 2, seed: int = 0,
               restarts: int = DEFAULT_RESTARTS) -> ClusterModel:
    """Best-of-restarts Lloyd's k-means, deterministic given (seed, restarts).

    For k=2 on at most EXHAUSTIVE_N points the exact optimum over all
    bipartitions is computed as well and returned when it beats the restarts.
    """
    points = np.asarray(features, dtype=np.float64)
    if points.ndim != 2:
        raise DimMismatch(f"expected (N, D) features, got shape {points.shape}")
    if points.shape[0] < k:
        raise TooFewPoints(f"{points.shape[0]} points for k={k}")
    best: tuple[float, int, np.ndarray] | None = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        centroids, inertia = _lloyd(points, _kmeanspp_init(points, k, rng))
        if best is None or (inertia, r) < (best[0], best[1]):
            best = (inertia, r, centroids)
    assert best is not None
    if k == 2 and points.shape[0] <= EXHAUSTIVE_N:
        exact_inertia, exact_centroids = _exhaustive_two_partition(points)
        if exact_inertia < best[0] - 1e-12:
            return ClusterModel(k=k, centroids=exact_centroids, seed=seed,
                                inertia=exact_inertia)
    return ClusterModel(k=k, centroids=best[2], seed=seed, inertia=best[0])


def assign(model: ClusterModel, features: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment; ties break to the lower cluster id."""
    points = np.asarray(features, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.centroids.shape[1]:
        raise DimMismatch(
            f"features of dim {points.shape[1:]} vs centroids of dim {model.centroids.shape[1]}"
        )
    return _squared_distances(points, model.centroids).argmin(axis=1)


def map_clusters(assignments: np.ndarray, field_ids: np.ndarray, alpha: float,
                 labels: LabelSet | None = None, strategy: str = "best_f1",
                 ndvi_means: dict[int, float] | None = None) -> dict[int, str]:
    """Decide which cluster is 'stressed'.

    best_f1 evaluates both mappings end to end (aggregation at the given
    alpha, scored on labeled fields) and keeps the better one; ties prefer
    higher accuracy, then the mapping where cluster 0 is stressed.
    low_ndvi marks the cluster with the lower mean NDVI as stressed.
    """
    if strategy == "low_ndvi":
        if ndvi_means is None or set(ndvi_means) != {0, 1}:
            raise MissingNdvi("low_ndvi mapping requires per-cluster mean NDVI for clusters 0 and 1")
        stressed_cluster = 0 if ndvi_means[0] <= ndvi_means[1] else 1
        return {stressed_cluster: STRESSED, 1 - stressed_cluster: HEALTHY}
    if strategy != "best_f1":
        raise ValueError(f"unknown mapping strategy {strategy!r}")
    if labels is None or not labels.entries:
        raise MissingLabels("best_f1 mapping requires a labeled evaluation set")

    from .evaluation import confusion, metrics  # deferred: evaluation imports this module

    scores = []
    for stressed_cluster in (0, 1):
        stressed = assignments == stressed_cluster
        preds = aggregate(field_ids, stressed, alpha)
        evaluable = [p for p in preds if p.field_id in labels.entries]
        present = LabelSet({p.field_id: labels.entries[p.field_id] for p in evaluable})
        m = metrics(confusion(evaluable, present))
        scores.append((m["f1"], m["accuracy"]))
    chosen = 0 if scores[0] >= scores[1] else 1
    return {chosen: STRESSED, 1 - chosen: HEALTHY}


def aggregate(field_ids: np.ndarray, stressed: np.ndarray, alpha: float,
              expected_fields: set[int] | None = None) -> list[FieldPrediction]:
    """Aggregate per-sub-patch classes to field labels.

    stressed_fraction = stressed / total per field; a field is stressed iff
    its fraction strictly exceeds alpha. If ``expected_fields`` is given,
    fields without any sub-patch raise EmptyField.
    """
    field_ids = np.asarray(field_ids)
    stressed = np.asarray(stressed, dtype=bool)
    if field_ids.shape != stressed.shape:
        raise DimMismatch(f"{field_ids.shape} field ids vs {stressed.shape} classes")
    counts: dict[int, list[int]] = {}
    for fid, s in zip(field_ids, stressed):
        entry = counts.setdefault(int(fid), [0, 0])
        entry[0] += int(s)
        entry[1] += 1
    if expected_fields is not None:
        missing = sorted(set(expected_fields) - set(counts))
        if missing:
            raise EmptyField(f"fields with no sub-patches: {missing}")
    preds = []
    for fid in sorted(counts):
        n_stressed, total = counts[fid]
        fraction = n_stressed / total
        preds.append(
            FieldPrediction(
                field_id=fid,
                stressed_fraction=fraction,
                label=STRESSED if fraction > alpha else HEALTHY,
                n_subpatches=total,
            )
        )
    return preds


def write_predictions(preds: list[FieldPrediction], path: str | Path) -> None:
    """predictions.csv with stressed fractions printed at 6 decimals."""
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["field_id", "label", "stressed_fraction", "n_subpatches"])
        for p in preds:
            writer.writerow([p.field_id, p.label, f"{p.stressed_fraction:.6f}", p.n_subpatches])


def read_predictions(path: str | Path) -> list[FieldPrediction]:
    preds = []
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            preds.append(
                FieldPrediction(
                    field_id=int(row["field_id"]),
                    stressed_fraction=float(row["stressed_fraction"]),
                    label=row["label"],
                    n_subpatches=int(row["n_subpatches"]),
                )
            )
    return preds
