"""Training loop and the high-level recommender estimator.

One step: sample a batch of examples, render each (metadata subsampling with
an ID-only fraction), encode, take exact loss/gradients from the softmax head,
and apply an SGD update with cosine learning-rate decay and decoupled weight
decay.  Runs are deterministic per seed in single-threaded mode: identical
seeds give identical loss curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .base import BaseEstimator
from .catalog import Dataset, Interactions, SequenceExample, build_dataset, ingest_jsonl
from .cluster import (
    ClusterMap,
    cluster_frequency,
    cluster_kmeans,
    cluster_random,
    cooccurrence_svd_features,
    default_n_clusters,
    init_centroids,
)
from .encoder import encode, encode_backward, init_encoder
from .evaluate import evaluate, rank_from_scores
from .exceptions import DataError, TrainingDivergedError
from .inference import topk_items
from .render import render_example, render_id_only
from .snapshot import ModelSnapshot
from .softmax import nll_and_grad, score_all
from .tables import GradBuffer, ModelTables, init_tables
from .validation import check_is_fitted

CLUSTERINGS = ("kmeans", "frequency", "random")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 5e-3
    weight_decay: float = 1e-5
    max_steps: int = 2000
    id_only_fraction: float = 0.25
    metadata_keep_prob: float = 0.5
    seed: int = 0
    softmax_mode: str = "twolevel"
    eval_every: int = 200
    patience: int = 10
    val_sample: int = 500  # 0 evaluates the whole validation split

    def __post_init__(self):
        if not 0.0 <= self.id_only_fraction <= 1.0:
            raise ValueError("id_only_fraction must be in [0, 1]")
        if not 0.0 <= self.metadata_keep_prob <= 1.0:
            raise ValueError("metadata_keep_prob must be in [0, 1]")
        if self.softmax_mode not in ("full", "twolevel"):
            raise ValueError("softmax_mode must be 'full' or 'twolevel'")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "max_steps": self.max_steps,
            "id_only_fraction": self.id_only_fraction,
            "metadata_keep_prob": self.metadata_keep_prob,
            "seed": self.seed,
            "softmax_mode": self.softmax_mode,
        }


def build_cluster_map(
    data: Dataset,
    clustering: str = "kmeans",
    n_clusters: int | None = None,
    seed: int = 0,
    svd_components: int = 32,
    features: np.ndarray | None = None,
) -> ClusterMap:
    """Item-side clustering per the chosen method, text singletons attached.

    k-means features default to SVD of the train co-occurrence matrix; any
    (n_items, p) matrix can be passed instead.
    """
    n_text = len(data.vocab)
    n_items = data.n_items
    n_clusters = n_clusters or default_n_clusters(n_items)
    if clustering == "kmeans":
        if features is None:
            features = cooccurrence_svd_features(data.split, n_items, svd_components)
        return cluster_kmeans(features, n_clusters, seed=seed, n_text=n_text)
    if clustering == "frequency":
        return cluster_frequency(data.train_item_counts, n_clusters, n_text=n_text)
    if clustering == "random":
        return cluster_random(n_items, n_clusters, seed=seed, n_text=n_text)
    raise ValueError(f"unknown clustering {clustering!r}; choose from {CLUSTERINGS}")


def init_model(
    data: Dataset,
    config: TrainConfig,
    dim: int = 64,
    item_dim: int = 512,
    clustering: str = "kmeans",
    n_clusters: int | None = None,
    cluster_map: ClusterMap | None = None,
    centroid_random_init: bool = False,
    kmeans_features: np.ndarray | None = None,
) -> ModelSnapshot:
    """Fresh seeded model: tables, cluster map, mean-initialized centroids."""
    if cluster_map is None:
        cluster_map = build_cluster_map(
            data, clustering, n_clusters, seed=config.seed, features=kmeans_features
        )
    base = init_tables(len(data.vocab), data.n_items, dim, item_dim, seed=config.seed)
    centroids = init_centroids(
        cluster_map,
        base.item_projected(),
        seed=config.seed,
        random_init=centroid_random_init,
    )
    tables = ModelTables(base.text, base.item_raw, base.projection, centroids)
    encoder = init_encoder(dim, seed=config.seed + 1, dtype=tables.text.data.dtype)
    snapshot_config = config.to_dict()
    snapshot_config.update({"dim": dim, "item_dim": item_dim, "clustering": clustering})
    return ModelSnapshot(
        tables=tables,
        encoder=encoder,
        cluster_map=cluster_map,
        vocab=data.vocab,
        item_ids=data.catalog.item_ids(),
        config=snapshot_config,
        name=data.name,
        price_edges=list(data.price_buckets.edges) if data.price_buckets else None,
    )


def cosine_lr(base_lr: float, step: int, max_steps: int) -> float:
    if max_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max_steps))


def _apply_update(snapshot: ModelSnapshot, grads: dict, lr: float, weight_decay: float, n: int) -> None:
    tables = snapshot.tables
    params = dict(tables.parameter_arrays())
    params.update(snapshot.encoder.parameter_arrays())
    for name, arr in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        # Decoupled weight decay on matrices/embeddings only, never biases.
        if weight_decay and arr.ndim == 2:
            arr *= 1.0 - lr * weight_decay
        arr -= lr * (grad / n)
    tables.bump_version()


def validation_recall(snapshot: ModelSnapshot, data: Dataset, k: int = 10, sample: int = 0) -> float:
    """Recall@k of the held-out validation targets under ID-only rendering."""
    examples = data.val_examples
    if sample and len(examples) > sample:
        examples = examples[:sample]
    mode = snapshot.config.get("softmax_mode", "twolevel")
    cmap = snapshot.cluster_map if mode == "twolevel" else None
    tables = snapshot.tables
    hits = 0
    for example in examples:
        seq = render_id_only(example, data)
        query, _ = encode(seq, tables, snapshot.encoder)
        scores = score_all(query, tables, cmap, mode=mode)
        rank = rank_from_scores(scores[tables.n_text :], example.target)
        hits += rank <= k
    return hits / len(examples)


@dataclass
class TrainResult:
    snapshot: ModelSnapshot
    metrics: list[dict] = field(default_factory=list)
    steps_run: int = 0
    stopped_early: bool = False


def train(data: Dataset, config: TrainConfig, snapshot: ModelSnapshot | None = None, **model_kwargs) -> TrainResult:
    """Optimize a (possibly fresh) model on the train split.

    Logs (step, loss, val_recall@10) every ``eval_every`` steps and stops
    early after ``patience`` evaluations without improvement.  A non-finite
    loss aborts with :class:`TrainingDivergedError`.
    """
    if snapshot is None:
        snapshot = init_model(data, config, **model_kwargs)
    tables = snapshot.tables
    encoder = snapshot.encoder
    cmap = snapshot.cluster_map
    mode = config.softmax_mode
    rng = np.random.default_rng(config.seed)
    n_train = len(data.train_examples)
    if n_train == 0:
        raise DataError("train split is empty")

    result = TrainResult(snapshot=snapshot)
    best_recall = -1.0
    evals_since_best = 0

    for step in range(config.max_steps):
        lr = cosine_lr(config.learning_rate, step, config.max_steps)
        batch_idx = rng.integers(0, n_train, size=config.batch_size)
        grads = GradBuffer(tables, encoder)
        batch_loss = 0.0
        for i in batch_idx:
            example = data.train_examples[int(i)]
            seq = render_example(
                example,
                data,
                rng,
                id_only_fraction=config.id_only_fraction,
                metadata_keep_prob=config.metadata_keep_prob,
            )
            query, cache = encode(seq, tables, encoder)
            target_ordinal = data.space.item_ordinal(example.target)
            loss, d_query, _ = nll_and_grad(query, target_ordinal, tables, cmap, mode, grads)
            encode_backward(cache, d_query, tables, encoder, grads)
            batch_loss += loss
        mean_loss = batch_loss / config.batch_size
        if not math.isfinite(mean_loss):
            raise TrainingDivergedError(f"non-finite loss {mean_loss} at step {step}")
        if lr != 0.0:
            _apply_update(snapshot, grads.finalize(tables), lr, config.weight_decay, config.batch_size)
            tables.check()
            encoder.check()
        result.steps_run = step + 1

        if config.eval_every and (step + 1) % config.eval_every == 0:
            recall = validation_recall(snapshot, data, k=10, sample=config.val_sample)
            result.metrics.append(
                {"step": step + 1, "loss": mean_loss, "val_recall@10": recall}
            )
            if recall > best_recall:
                best_recall = recall
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    result.stopped_early = True
                    break
    return result


class SequenceRecommender(BaseEstimator):
    """Next-item recommender: fit on an interaction corpus, predict item IDs.

    Follows the scikit-learn estimator protocol (constructor-only parameters,
    ``fit`` returns self, fitted attributes carry a trailing underscore).
    """

    def __init__(
        self,
        dim=64,
        item_dim=512,
        vocab_size=8192,
        clustering="kmeans",
        n_clusters=None,
        softmax_mode="twolevel",
        batch_size=64,
        learning_rate=5e-3,
        weight_decay=1e-5,
        max_steps=2000,
        id_only_fraction=0.25,
        metadata_keep_prob=0.5,
        eval_every=200,
        patience=10,
        val_sample=500,
        seed=0,
    ):
        self.dim = dim
        self.item_dim = item_dim
        self.vocab_size = vocab_size
        self.clustering = clustering
        self.n_clusters = n_clusters
        self.softmax_mode = softmax_mode
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_steps = max_steps
        self.id_only_fraction = id_only_fraction
        self.metadata_keep_prob = metadata_keep_prob
        self.eval_every = eval_every
        self.patience = patience
        self.val_sample = val_sample
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_steps=self.max_steps,
            id_only_fraction=self.id_only_fraction,
            metadata_keep_prob=self.metadata_keep_prob,
            seed=self.seed,
            softmax_mode=self.softmax_mode,
            eval_every=self.eval_every,
            patience=self.patience,
            val_sample=self.val_sample,
        )

    def fit(self, X):
        """X is a JSONL path, an Interactions object, or a prepared Dataset."""
        if isinstance(X, Dataset):
            data = X
        elif isinstance(X, Interactions):
            data = build_dataset(X, vocab_size=self.vocab_size)
        else:
            data = build_dataset(ingest_jsonl(X), vocab_size=self.vocab_size)
        result = train(
            data,
            self._train_config(),
            dim=self.dim,
            item_dim=self.item_dim,
            clustering=self.clustering,
            n_clusters=self.n_clusters,
        )
        self.dataset_ = data
        self.snapshot_ = result.snapshot
        self.metrics_ = result.metrics
        self.steps_run_ = result.steps_run
        return self

    def predict(self, histories, k: int = 10):
        """Top-k item IDs for each history of known external item IDs."""
        check_is_fitted(self, ["snapshot_", "dataset_"])
        snapshot = self.snapshot_
        data = self.dataset_
        n_text = snapshot.tables.n_text
        out = []
        for history in histories:
            try:
                indices = tuple(data.catalog.index_of(i) for i in history)
            except KeyError as exc:
                raise DataError(f"unknown item id {exc.args[0]!r}") from exc
            example = SequenceExample(user="query", history=indices, target=indices[-1])
            seq = render_id_only(example, data)
            query, _ = encode(seq, snapshot.tables, snapshot.encoder)
            if self.softmax_mode == "twolevel":
                top = topk_items(
                    query, k, snapshot.tables, snapshot.cluster_map, snapshot.space, engine="structure"
                )
                item_indices = top.ordinals - n_text
            else:
                item_scores = score_all(query, snapshot.tables, None, mode="full")[n_text:]
                order = np.lexsort((np.arange(item_scores.size), -item_scores))
                item_indices = order[:k]
            out.append([snapshot.item_ids[int(i)] for i in item_indices])
        return out

    def score(self, X=None) -> float:
        """Recall@10 on the held-out test split."""
        check_is_fitted(self, ["snapshot_", "dataset_"])
        engine = "structure" if self.softmax_mode == "twolevel" else "full"
        report = evaluate(self.snapshot_, self.dataset_, engine=engine)
        return report.recall[10]
