"""Comparison methods: a single GP over the whole wafer, and the two-step
method that clusters a fully measured wafer by value (1-D k-means) and then
fits one GP per cluster on later wafers.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .gp import GPOptions, PredictionResult, gpr
from .hier import grouped_gpr
from .wafer import MeasurementSet, die_coords

CH_INFINITY = sys.float_info.max


class CalibrationError(ValueError):
    pass


def naive_gp(train: MeasurementSet, test_coords, opts: GPOptions | None = None) -> PredictionResult:
    pred, _ = gpr(train.coords, train.values, np.asarray(test_coords).reshape(-1, 2), opts)
    return pred


# ---------------------------------------------------------------------------
# 1-D k-means


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray  # descending
    inertia: float
    history: tuple[float, ...]  # objective after every Lloyd update


def _assign(values, centers):
    return np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)


def _plusplus(values, k, rng):
    centers = [values[rng.integers(len(values))]]
    for _ in range(1, k):
        d2 = np.min((values[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        tot = d2.sum()
        if tot <= 0:
            break
        centers.append(values[rng.choice(len(values), p=d2 / tot)])
    return np.array(centers, dtype=float)


def _lloyd(values, centers, max_iter=300):
    k = len(centers)
    labels = _assign(values, centers)
    history = []
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.bincount(labels, weights=values, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the point worst served by its centre
            far = int(np.argmax(np.abs(values - centers[labels])))
            labels[far] = j
            counts = np.bincount(labels, minlength=k)
            sums = np.bincount(labels, weights=values, minlength=k)
        centers = sums / counts
        history.append(float(((values - centers[labels]) ** 2).sum()))
        new = _assign(values, centers)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centers, history


def kmeans_1d_fit(values, k: int, seed: int = 0, n_init: int = 10) -> KMeansResult:
    """Lloyd's algorithm on scalars with k-means++ seeding; best of `n_init` runs."""
    values = np.asarray(values, dtype=float).ravel()
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(np.unique(values)):
        raise ValueError("k too large")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centers = _plusplus(values, k, rng)
        if len(centers) < k:
            continue
        labels, centers, hist = _lloyd(values, centers)
        inertia = hist[-1]
        if best is None or inertia < best[2] - 1e-12 * max(1.0, abs(best[2])):
            best = (labels, centers, inertia, tuple(hist))
    labels, centers, inertia, hist = best
    order = np.argsort(-centers, kind="stable")
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    return KMeansResult(relabel[labels], centers[order], float(inertia), hist)


def kmeans_1d(values, k: int, seed: int = 0, n_init: int = 10) -> np.ndarray:
    return kmeans_1d_fit(values, k, seed, n_init).labels


# ---------------------------------------------------------------------------
# cluster-count criteria


def _check_labels(values, labels):
    values = np.asarray(values, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if len(values) != len(labels):
        raise ValueError("values and labels must align")
    uniq = np.unique(labels)
    return values, np.searchsorted(uniq, labels), len(uniq)


def within_ss(values, labels) -> float:
    values, lab, k = _check_labels(values, labels)
    means = np.bincount(lab, weights=values, minlength=k) / np.bincount(lab, minlength=k)
    return float(((values - means[lab]) ** 2).sum())


def ch_index(values, labels) -> float:
    """Calinski-Harabasz: between-SS/(k-1) over within-SS/(N-k).

    Returns ``sys.float_info.max`` when the within-cluster SS is zero.
    """
    values, lab, k = _check_labels(values, labels)
    n = len(values)
    if k < 2 or n <= k:
        raise ValueError("CH undefined")
    counts = np.bincount(lab, minlength=k)
    means = np.bincount(lab, weights=values, minlength=k) / counts
    w = float(((values - means[lab]) ** 2).sum())
    b = float((counts * (means - values.mean()) ** 2).sum())
    if w <= 0.0:
        return CH_INFINITY
    return (b / (k - 1)) / (w / (n - k))


def silhouette_mean(values, labels) -> float:
    """Mean silhouette width for 1-D data (O(N log N), singletons score 0)."""
    values, lab, k = _check_labels(values, labels)
    if k < 2:
        raise ValueError("silhouette undefined for fewer than 2 clusters")
    n = len(values)
    # sum_j |x - v_j| over each cluster, for every x, via sorted prefix sums
    dist_sum = np.empty((k, n))
    counts = np.bincount(lab, minlength=k)
    for c in range(k):
        v = np.sort(values[lab == c])
        pre = np.concatenate([[0.0], np.cumsum(v)])
        pos = np.searchsorted(v, values, side="right")
        left = values * pos - pre[pos]
        right = (pre[-1] - pre[pos]) - values * (len(v) - pos)
        dist_sum[c] = left + right
    own = counts[lab]
    a = np.where(own > 1, dist_sum[lab, np.arange(n)] / np.maximum(own - 1, 1), 0.0)
    mean_other = dist_sum / counts[:, None]
    mean_other[lab, np.arange(n)] = np.inf
    b = mean_other.min(axis=0)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def _valid_range(values, g_min, g_max):
    distinct = len(np.unique(values))
    if not (2 <= g_min <= g_max <= distinct) or g_max >= len(values):
        raise ValueError(
            f"need 2 <= g_min <= g_max <= distinct values and g_max < N "
            f"(got {g_min}, {g_max}, distinct={distinct}, N={len(values)})")


def select_k(values, g_min: int = 2, g_max: int = 10, criterion: str = "ch",
             seed: int = 0, n_init: int = 10) -> int:
    """Cluster count maximising CH or mean silhouette; ties go to smaller g."""
    values = np.asarray(values, dtype=float).ravel()
    if g_min == g_max == 2:
        return 2
    _valid_range(values, g_min, g_max)
    score = {"ch": ch_index, "silhouette": silhouette_mean}.get(criterion)
    if score is None:
        raise ValueError(f"unknown criterion {criterion!r}")
    best_g, best = g_min, -np.inf
    for g in range(g_min, g_max + 1):
        s = score(values, kmeans_1d(values, g, seed, n_init))
        if s > best:
            best_g, best = g, s
    return best_g


def elbow_k(values, g_min: int = 2, g_max: int = 10, seed: int = 0, n_init: int = 10) -> int:
    """Elbow of the within-SS curve: largest second difference over interior g."""
    values = np.asarray(values, dtype=float).ravel()
    lo = max(1, g_min - 1)
    hi = min(g_max + 1, len(np.unique(values)))
    gs = list(range(lo, hi + 1))
    w = [kmeans_1d_fit(values, g, seed, n_init).inertia for g in gs]
    best_g, best = g_min, -np.inf
    for i in range(1, len(gs) - 1):
        if not (g_min <= gs[i] <= g_max):
            continue
        d2 = w[i - 1] - 2 * w[i] + w[i + 1]
        if d2 > best:
            best_g, best = gs[i], d2
    return best_g


# ---------------------------------------------------------------------------
# two-step method


@dataclass(frozen=True)
class ClusterMap:
    k: int
    assignment: dict  # (x, y) -> label
    centroids: tuple[float, ...]
    source: tuple[int, int]  # (lot, wafer) of the calibration wafer

    def labels_for(self, coords) -> np.ndarray:
        out = np.empty(len(coords), dtype=np.int64)
        for i, (x, y) in enumerate(np.asarray(coords).reshape(-1, 2).tolist()):
            try:
                out[i] = self.assignment[(x, y)]
            except KeyError:
                raise CalibrationError(f"coordinate not calibrated: {(x, y)}") from None
        return out

    def to_dict(self) -> dict:
        items = sorted(self.assignment.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        return {
            "k": self.k,
            "source": {"lot": self.source[0], "wafer": self.source[1]},
            "centroids": list(self.centroids),
            "assignment": [{"x": x, "y": y, "label": int(l)} for (x, y), l in items],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterMap":
        assignment = {(int(a["x"]), int(a["y"])): int(a["label"]) for a in d["assignment"]}
        k = int(d["k"])
        if any(not 0 <= l < k for l in assignment.values()):
            raise ValueError("cluster label out of range")
        src = d.get("source", {})
        return cls(k, assignment, tuple(float(c) for c in d.get("centroids", [])),
                   (int(src.get("lot", 1)), int(src.get("wafer", 1))))


def two_step_calibrate(full_wafer: MeasurementSet, g_range=(2, 10), criterion: str = "ch",
                       seed: int = 0, n_init: int = 10, require_complete: bool = True) -> ClusterMap:
    """First step: cluster a fully measured wafer by value.

    Dies of the wafer geometry missing from `full_wafer` (only possible with
    ``require_complete=False``) take the label of the nearest measured die,
    ties broken toward smaller x, then smaller y.
    """
    if require_complete and not full_wafer.is_complete():
        raise CalibrationError("calibration requires full measurement")
    values = full_wafer.values
    g_min, g_max = g_range
    # up to one cluster per distinct value, so exact levels are recoverable
    g_max = min(g_max, len(np.unique(values)))
    if g_max < max(g_min, 2):
        raise CalibrationError("degenerate calibration")
    k = select_k(values, g_min, g_max, criterion, seed, n_init)
    km = kmeans_1d_fit(values, k, seed, n_init)

    assignment = {(int(x), int(y)): int(l) for (x, y), l in zip(full_wafer.coords.tolist(), km.labels)}
    every = die_coords(full_wafer.geometry)
    missing = np.array([c for c in every.tolist() if tuple(c) not in assignment]).reshape(-1, 2)
    if len(missing):
        # lexsort so argmin's first hit is the smallest (x, y) among equals
        order = np.lexsort((full_wafer.coords[:, 1], full_wafer.coords[:, 0]))
        cal = full_wafer.coords[order]
        lab = km.labels[order]
        near = np.argmin(cdist(missing, cal, "sqeuclidean"), axis=1)
        for (x, y), j in zip(missing.tolist(), near):
            assignment[(x, y)] = int(lab[j])
    return ClusterMap(k, assignment, tuple(km.centroids.tolist()), (full_wafer.lot, full_wafer.wafer))


def two_step_predict(cluster_map: ClusterMap, train: MeasurementSet, test_coords,
                     opts: GPOptions | None = None) -> PredictionResult:
    """Second step: one GP per calibrated cluster, output in input order."""
    test_coords = np.asarray(test_coords, dtype=np.int64).reshape(-1, 2)
    test_labels = cluster_map.labels_for(test_coords)
    train_labels = cluster_map.labels_for(train.coords)
    pred, _ = grouped_gpr(train.coords, train.values, train_labels, test_coords, test_labels,
                          cluster_map.k, opts)
    return pred


def cluster_map_from_tiling(tiling, source=(1, 1)) -> ClusterMap:
    """ClusterMap whose labels are the site ids (useful as a cross-check)."""
    assignment = {(int(x), int(y)): int(s) for (x, y), s in zip(tiling.dies.tolist(), tiling.die_site)}
    return ClusterMap(tiling.layout.site_count, assignment, (), source)
