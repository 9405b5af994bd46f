import itertools

import numpy as np
import pytest

from hsrec.cluster import (
    ClusterMap,
    FrequencyClusters,
    ItemKMeans,
    RandomClusters,
    cluster_frequency,
    cluster_kmeans,
    cluster_random,
    cooccurrence_svd_features,
    default_n_clusters,
    init_centroids,
    kmeans_fit,
)
from hsrec.tables import init_tables
from hsrec.softmax import score_all


def brute_force_two_partition_objective(points):
    """Best k=2 within-cluster sum of squares by enumerating all partitions."""
    points = np.asarray(points, dtype=np.float64)
    best = np.inf
    n = len(points)
    for mask in range(1, 2**n - 1):
        sel = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        obj = 0.0
        for side in (points[sel], points[~sel]):
            obj += float(np.sum((side - side.mean(axis=0)) ** 2))
        best = min(best, obj)
    return best


def test_two_separated_blobs():
    rng = np.random.default_rng(0)
    blob_a = rng.normal(0.0, 0.1, size=(20, 2))
    blob_b = rng.normal(10.0, 0.1, size=(20, 2))
    X = np.vstack([blob_a, blob_b])
    labels, _, _, _ = kmeans_fit(X, 2, seed=1)
    assert len(set(labels[:20])) == 1
    assert len(set(labels[20:])) == 1
    assert labels[0] != labels[-1]


def test_default_cluster_count_is_sqrt():
    assert default_n_clusters(10_000) == 100
    assert default_n_clusters(10) == 4


def test_one_dimensional_known_optimum():
    # Oracle computed first: enumerate every 2-partition of {0, 1, 10, 11}.
    points = np.array([[0.0], [1.0], [10.0], [11.0]])
    oracle = brute_force_two_partition_objective(points)
    labels, _, inertia, _ = kmeans_fit(points, 2, seed=0)
    assert labels[0] == labels[1] and labels[2] == labels[3] and labels[0] != labels[2]
    assert inertia == pytest.approx(oracle, rel=1e-12)


def test_kmeans_deterministic_given_seed():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((60, 5))
    a = ItemKMeans(n_clusters=7, seed=123).fit(X)
    b = ItemKMeans(n_clusters=7, seed=123).fit(X)
    assert np.array_equal(a.labels_, b.labels_)
    assert np.array_equal(a.cluster_centers_, b.cluster_centers_)


def test_kmeans_too_many_clusters_errors():
    with pytest.raises(ValueError):
        kmeans_fit(np.zeros((3, 2)), 4)


def test_kmeans_handles_duplicate_points():
    X = np.zeros((10, 2))
    X[5:] = 1.0
    labels, _, _, _ = kmeans_fit(X, 3, seed=0)
    assert np.bincount(labels, minlength=3).min() >= 1


def test_frequency_groups_similar_counts():
    cmap = cluster_frequency([9, 9, 1, 1], n_clusters=2, n_text=0)
    assert cmap.item_assignment[0] == cmap.item_assignment[1]
    assert cmap.item_assignment[2] == cmap.item_assignment[3]
    assert cmap.item_assignment[0] != cmap.item_assignment[2]


def test_frequency_near_equal_bins():
    labels = FrequencyClusters(n_clusters=3).fit_predict(np.arange(10))
    sizes = sorted(np.bincount(labels), reverse=True)
    assert sizes == [4, 3, 3]


def test_frequency_equal_counts_ordinal_tiebreak():
    a = FrequencyClusters(n_clusters=2).fit_predict(np.full(6, 5))
    b = FrequencyClusters(n_clusters=2).fit_predict(np.full(6, 5))
    assert np.array_equal(a, b)
    # Count-descending with index tie-break: lowest indices land first.
    assert np.array_equal(a, [0, 0, 0, 1, 1, 1])


def test_random_deterministic_and_balanced():
    a = RandomClusters(n_clusters=4, seed=11).fit_predict(10)
    b = RandomClusters(n_clusters=4, seed=11).fit_predict(10)
    assert np.array_equal(a, b)
    sizes = np.bincount(a, minlength=4)
    assert sizes.max() - sizes.min() <= 1


def test_random_cluster_uniformity_monte_carlo():
    # Each of the 12 items should land in each of the 3 clusters about
    # uniformly over seeds: binomial(n_seeds, size_share) within 3 sigma.
    n_items, n_clusters, n_seeds = 12, 3, 1000
    hits = np.zeros((n_items, n_clusters))
    for seed in range(n_seeds):
        labels = RandomClusters(n_clusters=n_clusters, seed=seed).fit_predict(n_items)
        hits[np.arange(n_items), labels] += 1
    p = 1.0 / n_clusters
    sigma = np.sqrt(n_seeds * p * (1 - p))
    assert np.all(np.abs(hits - n_seeds * p) <= 3 * sigma + 1e-9)


def test_cluster_map_inversion_all_constructors():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 3))
    maps = [
        cluster_kmeans(X, 5, seed=0, n_text=7),
        cluster_frequency(rng.integers(0, 50, size=30), 5, n_text=7),
        cluster_random(30, 5, seed=0, n_text=7),
    ]
    for cmap in maps:
        seen = np.zeros(cmap.n_text + cmap.n_items, dtype=int)
        for cluster_id in range(cmap.n_clusters):
            for ordinal in cmap.members_of(cluster_id):
                assert cmap.cluster_of(int(ordinal)) == cluster_id
                seen[ordinal] += 1
        assert np.all(seen == 1)
        assert np.all(cmap.cluster_sizes() >= 1)


def test_all_constructors_interchangeable_for_scoring():
    rng = np.random.default_rng(5)
    tables = init_tables(4, 20, 6, 3, seed=1)
    from hsrec.cluster import init_centroids as ic

    X = rng.standard_normal((20, 3))
    for cmap in (
        cluster_kmeans(X, 4, seed=0, n_text=4),
        cluster_frequency(rng.integers(0, 9, 20), 4, n_text=4),
        cluster_random(20, 4, seed=0, n_text=4),
    ):
        t = init_tables(4, 20, 6, 3, seed=1)
        centroids = ic(cmap, t.item_projected())
        from hsrec.tables import ModelTables

        full = ModelTables(t.text, t.item_raw, t.projection, centroids)
        scores = score_all(rng.standard_normal(6), full, cmap, mode="twolevel")
        assert np.isfinite(scores).all()
        assert np.exp(scores).sum() == pytest.approx(1.0, abs=1e-9)


def test_init_centroids_means():
    cmap = ClusterMap(n_text=0, item_assignment=[0, 1, 1], n_item_clusters=2)
    vecs = np.array([[2.0, 4.0], [1.0, 1.0], [3.0, 5.0]])
    table = init_centroids(cmap, vecs)
    assert np.array_equal(table.data[0], vecs[0])  # singleton: mean of one
    assert np.array_equal(table.data[1], (vecs[1] + vecs[2]) / 2)


def test_init_centroids_random_mode_seeded():
    cmap = ClusterMap(0, [0, 1, 0, 1], 2)
    vecs = np.ones((4, 3))
    a = init_centroids(cmap, vecs, seed=3, random_init=True)
    b = init_centroids(cmap, vecs, seed=3, random_init=True)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, init_centroids(cmap, vecs).data)


def test_cluster_map_rejects_empty_cluster():
    with pytest.raises(ValueError):
        ClusterMap(0, [0, 0, 0], 2)


def test_csv_export(tmp_path):
    cmap = ClusterMap(2, [0, 1], 2)
    path = tmp_path / "clusters.csv"
    cmap.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "ordinal,cluster"
    # Text singletons map to themselves; items offset by n_text.
    assert lines[1:] == ["0,0", "1,1", "2,2", "3,3"]


def test_cooccurrence_features_shape(tmp_path):
    import json

    from hsrec.catalog import ingest_jsonl, split_leave_one_out

    rows = []
    for u in range(8):
        for t in range(4):
            rows.append({"user": f"u{u}", "item": f"i{(u * 2 + t) % 10}", "timestamp": t})
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows))
    split = split_leave_one_out(ingest_jsonl(path))
    feats = cooccurrence_svd_features(split, 10, n_components=4)
    assert feats.shape == (10, 4)
    assert np.isfinite(feats).all()
