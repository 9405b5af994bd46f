"""Render interaction examples into mixed text/item token sequences.

Each history item contributes its item token plus, outside ID-only mode, a
randomly sampled subset of its metadata fields (one draw per item per field).
A configurable fraction of training examples is rendered ID-only end to end,
which is what lets inference run on bare item IDs; evaluation rendering is
always ID-only.
"""

from __future__ import annotations

import numpy as np

from .catalog import Dataset, SequenceExample

SAMPLED_FIELDS = ("title", "brand", "price", "category")


def render_example(
    example: SequenceExample,
    data: Dataset,
    rng: np.random.Generator | None = None,
    id_only_fraction: float = 0.25,
    metadata_keep_prob: float = 0.5,
    force_id_only: bool = False,
) -> list[int]:
    """Token ordinals for one example's prompt (history side only).

    Layout: prompt prefix, then per item ``id:`` marker + item token
    (+ sampled metadata), then the question words and a trailing ``id:``
    marker ahead of the slot being predicted.
    """
    vocab = data.vocab
    space = data.space
    id_only = force_id_only
    if not id_only:
        if rng is None:
            raise ValueError("rng is required unless force_id_only=True")
        id_only = rng.random() < id_only_fraction

    tokens: list[int] = list(vocab.prompt_prefix_ids)
    for item_index in example.history:
        tokens.append(vocab.id_marker_id)
        tokens.append(space.item_ordinal(item_index))
        if id_only:
            continue
        record = data.catalog[item_index]
        for name in SAMPLED_FIELDS:
            value = getattr(record, name)
            if value is None or rng.random() >= metadata_keep_prob:
                continue
            tokens.append(vocab.field_marker_ids[name])
            if name == "price":
                bucket = data.price_buckets.bucket(float(value))
                tokens.append(vocab.price_bucket_ids[bucket])
            else:
                tokens.extend(vocab.encode_text(str(value)))
    tokens.extend(vocab.prompt_question_ids)
    tokens.append(vocab.id_marker_id)
    return tokens


def render_id_only(example: SequenceExample, data: Dataset) -> list[int]:
    """Deterministic ID-only rendering used for validation and test scoring."""
    return render_example(example, data, force_id_only=True)
