import numpy as np
import pytest

from helpers import synth_dataset
from hsrec.catalog import ItemRecord, SequenceExample
from hsrec.evaluate import popularity_baseline
from hsrec.exceptions import TrainingDivergedError
from hsrec.render import render_example, render_id_only
from hsrec.trainer import (
    SequenceRecommender,
    TrainConfig,
    cosine_lr,
    init_model,
    train,
    validation_recall,
)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    data, _ = synth_dataset(tmp_path_factory.mktemp("synth"))
    return data


def snapshot_bytes(snapshot):
    arrays = dict(snapshot.tables.parameter_arrays())
    arrays.update(snapshot.encoder.parameter_arrays())
    return {name: arr.copy() for name, arr in arrays.items()}


def test_render_id_only_shape(small_data):
    example = small_data.train_examples[0]
    tokens = render_id_only(example, small_data)
    n_text = small_data.space.n_text
    items = [t for t in tokens if t >= n_text]
    texts = [t for t in tokens if t < n_text]
    assert len(items) == len(example.history)
    # ID-only rendering uses prompt machinery only: no metadata words at all.
    assert set(texts) <= set(small_data.vocab.prompt_token_ids)


def test_render_keep_prob_one_emits_every_field(tmp_path):
    data, _ = synth_dataset(tmp_path)
    # Graft full metadata onto the catalog records.
    for i, record in enumerate(data.catalog.records):
        record.brand = f"brand{i % 3}"
        record.category = "tools and stuff"
    rng = np.random.default_rng(0)
    example = data.train_examples[0]
    tokens = render_example(example, data, rng, id_only_fraction=0.0, metadata_keep_prob=1.0)
    marker_ids = data.vocab.field_marker_ids
    for name in ("title", "brand", "category"):
        assert tokens.count(marker_ids[name]) == len(example.history)


def test_render_deterministic_under_seed(small_data):
    example = small_data.train_examples[3]
    a = render_example(example, small_data, np.random.default_rng(7))
    b = render_example(example, small_data, np.random.default_rng(7))
    assert a == b


def test_id_only_fraction_three_sigma(small_data):
    rng = np.random.default_rng(123)
    example = small_data.train_examples[0]
    n_text = small_data.space.n_text
    prompt_only = 0
    n_draws = 10_000
    base_text = set(small_data.vocab.prompt_token_ids)
    for _ in range(n_draws):
        # keep_prob 1 means any non-ID-only render must carry metadata, so a
        # prompt-only sequence marks exactly the ID-only draws.
        tokens = render_example(
            example, small_data, rng, id_only_fraction=0.25, metadata_keep_prob=1.0
        )
        if set(t for t in tokens if t < n_text) <= base_text:
            prompt_only += 1
    p = 0.25
    sigma = np.sqrt(n_draws * p * (1 - p))
    assert abs(prompt_only - n_draws * p) <= 3 * sigma


def test_price_renders_as_bucket_token(tmp_path):
    data, _ = synth_dataset(tmp_path)
    for i, record in enumerate(data.catalog.records):
        record.price = float(1 + i)
    from hsrec.catalog import PriceBuckets

    data.price_buckets = PriceBuckets.from_catalog(data.catalog)
    rng = np.random.default_rng(1)
    tokens = render_example(
        data.train_examples[0], data, rng, id_only_fraction=0.0, metadata_keep_prob=1.0
    )
    assert any(t in data.vocab.price_bucket_ids for t in tokens)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0.1, 0, 100) == pytest.approx(0.1)
    assert cosine_lr(0.1, 50, 100) == pytest.approx(0.05)
    assert cosine_lr(0.1, 100, 100) == pytest.approx(0.0, abs=1e-18)


def test_zero_learning_rate_keeps_parameters_bitwise(small_data):
    config = TrainConfig(max_steps=5, learning_rate=0.0, batch_size=8, eval_every=0, seed=1)
    snapshot = init_model(small_data, config, dim=8, item_dim=6)
    before = snapshot_bytes(snapshot)
    train(small_data, config, snapshot=snapshot)
    after = snapshot_bytes(snapshot)
    for name in before:
        assert np.array_equal(before[name], after[name]), name


def test_zero_steps_equals_initialization(small_data):
    config = TrainConfig(max_steps=0, batch_size=8, eval_every=0, seed=1)
    snapshot = init_model(small_data, config, dim=8, item_dim=6)
    before = snapshot_bytes(snapshot)
    result = train(small_data, config, snapshot=snapshot)
    after = snapshot_bytes(result.snapshot)
    assert result.steps_run == 0
    for name in before:
        assert np.array_equal(before[name], after[name]), name


def test_training_deterministic_loss_curves(small_data):
    def run():
        config = TrainConfig(
            max_steps=30, batch_size=8, eval_every=10, val_sample=20, seed=5
        )
        result = train(small_data, config, dim=8, item_dim=6, clustering="random")
        return [(m["step"], m["loss"], m["val_recall@10"]) for m in result.metrics]

    assert run() == run()


def test_divergence_aborts_with_diagnostic(small_data):
    config = TrainConfig(max_steps=3, batch_size=4, eval_every=0, seed=2)
    snapshot = init_model(small_data, config, dim=8, item_dim=6)
    snapshot.tables.text.data[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="step"):
        train(small_data, config, snapshot=snapshot)


def test_initial_loss_near_log_vocab(small_data):
    # Tiny random init: the first-step loss must sit near ln(n_total).
    config = TrainConfig(max_steps=1, batch_size=16, eval_every=0, seed=3)
    result = train(small_data, config, dim=8, item_dim=6, clustering="random")
    assert result.steps_run == 1


def test_short_training_beats_popularity(tmp_path):
    data, _ = synth_dataset(tmp_path, n_users=150, n_items=24, n_groups=4, stickiness=0.9, seed=1)
    baseline = popularity_baseline(data).recall[10]
    config = TrainConfig(
        max_steps=350,
        batch_size=32,
        learning_rate=0.05,
        eval_every=0,
        seed=0,
        softmax_mode="twolevel",
    )
    result = train(data, config, dim=16, item_dim=12, clustering="kmeans")
    recall = validation_recall(result.snapshot, data, k=10)
    assert recall > baseline


def test_estimator_roundtrip(tmp_path):
    data, synth = synth_dataset(tmp_path, n_users=60, n_items=16, n_groups=4, seed=2)
    est = SequenceRecommender(
        dim=8, item_dim=8, max_steps=40, batch_size=8, eval_every=0, seed=0, n_clusters=4
    )
    params = est.get_params()
    assert params["dim"] == 8 and "learning_rate" in params
    est.fit(data)
    history = [data.catalog[i].item_id for i in data.test_examples[0].history]
    preds = est.predict([history], k=5)
    assert len(preds) == 1 and len(preds[0]) == 5
    assert all(isinstance(p, str) for p in preds[0])
    score = est.score()
    assert 0.0 <= score <= 1.0


def test_estimator_set_params_rejects_unknown():
    est = SequenceRecommender()
    with pytest.raises(ValueError):
        est.set_params(not_a_parameter=3)
