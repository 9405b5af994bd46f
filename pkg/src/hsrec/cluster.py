"""Partition the item catalog into clusters; text tokens are singleton clusters.

Cluster ids are unified: text token ``v`` is cluster ``v`` (its own singleton),
and item cluster ``j`` is cluster ``n_text + j``.  The item-side partition can
come from k-means on item feature vectors, from train-frequency binning, or
from a seeded random assignment; all three produce interchangeable
``ClusterMap`` objects.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .base import BaseEstimator
from .tables import EmbeddingTable
from .validation import check_array, check_random_state


def default_n_clusters(n_items: int) -> int:
    """ceil(sqrt(n_items)): the recommended item-cluster count."""
    return int(math.ceil(math.sqrt(n_items)))


class ClusterMap:
    """Total map token -> cluster with exact inverse member lists."""

    def __init__(self, n_text: int, item_assignment, n_item_clusters: int):
        assignment = np.ascontiguousarray(item_assignment, dtype=np.int64)
        if assignment.ndim != 1:
            raise ValueError("item assignment must be a 1-D array")
        if n_item_clusters < 1 and assignment.size > 0:
            raise ValueError("need at least one item cluster")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= n_item_clusters):
            raise ValueError("item assignment contains out-of-range cluster ids")
        counts = np.bincount(assignment, minlength=n_item_clusters)
        if assignment.size and (counts == 0).any():
            empty = int(np.flatnonzero(counts == 0)[0])
            raise ValueError(f"item cluster {empty} is empty")
        self.n_text = int(n_text)
        self.item_assignment = assignment
        self.n_item_clusters = int(n_item_clusters)
        # Items grouped by cluster for O(1) member slices and segment reductions.
        self.item_order = np.argsort(assignment, kind="stable")
        self.offsets = np.zeros(n_item_clusters + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])
        self.segment_of_ordered = np.repeat(np.arange(n_item_clusters), counts)

    @property
    def n_items(self) -> int:
        return self.item_assignment.size

    @property
    def n_clusters(self) -> int:
        return self.n_text + self.n_item_clusters

    def cluster_of(self, ordinal: int) -> int:
        if ordinal < self.n_text:
            return ordinal
        return self.n_text + int(self.item_assignment[ordinal - self.n_text])

    def is_item_cluster(self, cluster_id: int) -> bool:
        return cluster_id >= self.n_text

    def item_members(self, item_cluster: int) -> np.ndarray:
        """Item indices belonging to item cluster ``item_cluster``."""
        lo, hi = self.offsets[item_cluster], self.offsets[item_cluster + 1]
        return self.item_order[lo:hi]

    def members_of(self, cluster_id: int) -> np.ndarray:
        """Unified ordinals in a cluster (singleton list for text clusters)."""
        if cluster_id < self.n_text:
            return np.asarray([cluster_id], dtype=np.int64)
        return self.n_text + self.item_members(cluster_id - self.n_text)

    def cluster_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def assignment(self) -> np.ndarray:
        """Full unified-ordinal assignment array (text part is the identity)."""
        full = np.empty(self.n_text + self.n_items, dtype=np.int64)
        full[: self.n_text] = np.arange(self.n_text)
        full[self.n_text :] = self.n_text + self.item_assignment
        return full

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ordinal", "cluster"])
            for ordinal, cluster in enumerate(self.assignment()):
                writer.writerow([ordinal, int(cluster)])


def _kmeans_pp_init(X: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new center drawn proportional to squared distance."""
    n = X.shape[0]
    centers = np.empty((n_clusters, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, n_clusters):
        total = d2.sum()
        if total <= 0:
            # All points coincide with chosen centers; any point works.
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[j] = X[pick]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def kmeans_fit(X: np.ndarray, n_clusters: int, seed=0, max_iter: int = 50, tol: float = 1e-4):
    """Lloyd iterations with k-means++ seeding.

    Deterministic given the seed.  An empty cluster is reseeded to the point
    farthest from that cluster's previous centroid.  Stops after ``max_iter``
    rounds or when the largest centroid move falls below ``tol`` relative to
    the largest centroid norm.

    Returns (labels, centers, inertia, n_iter).
    """
    X = check_array(X, dtype=np.float64, name="item_vectors")
    n = X.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    rng = check_random_state(seed)
    centers = _kmeans_pp_init(X, n_clusters, rng)
    labels = np.zeros(n, dtype=np.int64)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        # Squared distances via the expansion ||x||^2 - 2<x,c> + ||c||^2.
        d2 = (
            np.sum(X**2, axis=1)[:, None]
            - 2.0 * (X @ centers.T)
            + np.sum(centers**2, axis=1)[None, :]
        )
        labels = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        counts = np.bincount(labels, minlength=n_clusters)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        new_centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(np.sum((X - centers[j]) ** 2, axis=1)))
            new_centers[j] = X[far]
        shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
        scale = max(np.max(np.linalg.norm(centers, axis=1)), 1e-12)
        centers = new_centers
        if shift / scale < tol:
            break
    d2 = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * (X @ centers.T)
        + np.sum(centers**2, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    # Duplicate points or centers can still leave a cluster unassigned; force
    # the farthest point into each so every cluster is non-empty.
    counts = np.bincount(labels, minlength=n_clusters)
    for j in np.flatnonzero(counts == 0):
        eligible = counts[labels] > 1
        dist_j = np.sum((X - centers[j]) ** 2, axis=1)
        dist_j[~eligible] = -np.inf
        far = int(np.argmax(dist_j))
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] += 1
        centers[j] = X[far]
    d2_own = np.sum((X - centers[labels]) ** 2, axis=1)
    inertia = float(np.sum(d2_own))
    return labels, centers, inertia, n_iter


def _contiguous_bins(order: np.ndarray, n_clusters: int) -> np.ndarray:
    """Slice an item ordering into n_clusters contiguous bins, sizes within 1."""
    n = order.size
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    labels = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, n_clusters)
    start = 0
    for j in range(n_clusters):
        size = base + (1 if j < extra else 0)
        labels[order[start : start + size]] = j
        start += size
    return labels


class ItemKMeans(BaseEstimator):
    """k-means over item feature vectors (k-means++ seeding, Lloyd updates)."""

    def __init__(self, n_clusters=None, seed=0, max_iter=50, tol=1e-4):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X):
        X = check_array(X, dtype=np.float64, name="X")
        n_clusters = self.n_clusters or default_n_clusters(X.shape[0])
        labels, centers, inertia, n_iter = kmeans_fit(
            X, n_clusters, seed=self.seed, max_iter=self.max_iter, tol=self.tol
        )
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.inertia_ = inertia
        self.n_iter_ = n_iter
        return self

    def fit_predict(self, X):
        return self.fit(X).labels_


class FrequencyClusters(BaseEstimator):
    """Items sorted by (count desc, index asc), sliced into near-equal bins."""

    def __init__(self, n_clusters=None):
        self.n_clusters = n_clusters

    def fit(self, counts):
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValueError("counts must be a 1-D array covering every item")
        n_clusters = self.n_clusters or default_n_clusters(counts.size)
        order = np.lexsort((np.arange(counts.size), -counts))
        self.labels_ = _contiguous_bins(order, n_clusters)
        return self

    def fit_predict(self, counts):
        return self.fit(counts).labels_


class RandomClusters(BaseEstimator):
    """Seeded shuffle then near-equal contiguous slicing."""

    def __init__(self, n_clusters=None, seed=0):
        self.n_clusters = n_clusters
        self.seed = seed

    def fit(self, n_items):
        if np.ndim(n_items) > 0:
            n_items = len(n_items)
        n_items = int(n_items)
        if n_items < 1:
            raise ValueError("need at least one item")
        n_clusters = self.n_clusters or default_n_clusters(n_items)
        rng = check_random_state(self.seed)
        order = rng.permutation(n_items)
        self.labels_ = _contiguous_bins(order, n_clusters)
        return self

    def fit_predict(self, n_items):
        return self.fit(n_items).labels_


def cluster_kmeans(item_vectors, n_clusters=None, seed=0, n_text=0, max_iter=50, tol=1e-4) -> ClusterMap:
    est = ItemKMeans(n_clusters=n_clusters, seed=seed, max_iter=max_iter, tol=tol).fit(item_vectors)
    n = est.labels_.max() + 1 if est.labels_.size else 0
    return ClusterMap(n_text, est.labels_, max(n, est.cluster_centers_.shape[0]))


def cluster_frequency(train_counts, n_clusters=None, n_text=0) -> ClusterMap:
    est = FrequencyClusters(n_clusters=n_clusters).fit(train_counts)
    return ClusterMap(n_text, est.labels_, int(est.labels_.max()) + 1)


def cluster_random(n_items, n_clusters=None, seed=0, n_text=0) -> ClusterMap:
    est = RandomClusters(n_clusters=n_clusters, seed=seed).fit(n_items)
    return ClusterMap(n_text, est.labels_, int(est.labels_.max()) + 1)


def init_centroids(
    cluster_map: ClusterMap,
    item_projected: np.ndarray,
    seed=None,
    random_init: bool = False,
) -> EmbeddingTable:
    """Item-cluster centroid table: member means by default, random if asked.

    Text singleton clusters have no row here; their centroid *is* the text
    embedding row (shared parameter), so a gradient step on either view moves
    the other.
    """
    item_projected = np.asarray(item_projected)
    dim = item_projected.shape[1]
    dtype = item_projected.dtype
    out = np.zeros((cluster_map.n_item_clusters, dim), dtype=dtype)
    if random_init:
        rng = check_random_state(seed)
        scale = 1.0 / np.sqrt(dim)
        out[:] = rng.uniform(-scale, scale, size=out.shape).astype(dtype)
    else:
        for j in range(cluster_map.n_item_clusters):
            members = cluster_map.item_members(j)
            out[j] = item_projected[members].mean(axis=0, dtype=np.float64).astype(dtype)
    return EmbeddingTable(out)


def cooccurrence_svd_features(split, n_items: int, n_components: int = 32) -> np.ndarray:
    """Item features for k-means: SVD of the log train co-occurrence matrix.

    Two items co-occur when they appear in the same user's train events.  Dense
    SVD keeps this deterministic; it is meant for desk-scale catalogs.
    """
    if n_items > 20000:
        raise ValueError("dense co-occurrence SVD is limited to catalogs of <= 20k items")
    cooc = np.zeros((n_items, n_items), dtype=np.float64)
    for events in split.train_events.values():
        items = np.unique([e.item_index for e in events])
        cooc[np.ix_(items, items)] += 1.0
    n_components = min(n_components, n_items)
    u, s, _ = np.linalg.svd(np.log1p(cooc), full_matrices=False)
    return u[:, :n_components] * s[:n_components]
