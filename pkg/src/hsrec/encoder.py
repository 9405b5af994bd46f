"""Sequence encoder: mean-pooled embeddings through a two-layer MLP plus skip.

This stands in for an autoregressive backbone at desk scale; it turns a
rendered token sequence into the query vector that the softmax head consumes.
The interface is the contract — any module that maps a token sequence to a
d-dimensional query vector can replace it.  Gradients are hand-derived and
checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tables import GradBuffer, ModelTables
from .validation import check_finite, check_random_state


@dataclass
class EncoderParams:
    hidden_w: np.ndarray  # (d, d)
    hidden_b: np.ndarray  # (d,)
    out_w: np.ndarray  # (d, d)
    out_b: np.ndarray  # (d,)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {
            "enc_hidden_w": self.hidden_w,
            "enc_hidden_b": self.hidden_b,
            "enc_out_w": self.out_w,
            "enc_out_b": self.out_b,
        }

    def check(self) -> None:
        for name, arr in self.parameter_arrays().items():
            check_finite(arr, name)


def init_encoder(dim: int, seed=0, dtype=np.float32) -> EncoderParams:
    rng = check_random_state(seed)
    scale = 1.0 / np.sqrt(dim)
    return EncoderParams(
        hidden_w=rng.uniform(-scale, scale, size=(dim, dim)).astype(dtype),
        hidden_b=np.zeros(dim, dtype=dtype),
        out_w=rng.uniform(-scale, scale, size=(dim, dim)).astype(dtype),
        out_b=np.zeros(dim, dtype=dtype),
    )


@dataclass
class EncodeCache:
    """Forward activations needed by the backward pass."""

    ordinals: np.ndarray
    pooled: np.ndarray
    hidden: np.ndarray


def encode(ordinals, tables: ModelTables, params: EncoderParams):
    """Token ordinals -> (query vector, cache).

    query = pooled + out_w @ tanh(hidden_w @ pooled + hidden_b) + out_b,
    where pooled is the mean input embedding.  The identity skip keeps the
    input gradient from being throttled by two near-zero weight matrices at
    the start of training.  Mean pooling makes the encoder order-invariant;
    that is a deliberate backbone limitation, not a property of the head.
    """
    ords = np.asarray(ordinals, dtype=np.int64)
    if ords.size == 0:
        raise ValueError("cannot encode an empty token sequence")
    n_text = tables.n_text
    is_item = ords >= n_text
    embeds = np.empty((ords.size, tables.dim), dtype=np.float64)
    if (~is_item).any():
        embeds[~is_item] = tables.text.data[ords[~is_item]]
    if is_item.any():
        embeds[is_item] = tables.item_projected()[ords[is_item] - n_text]
    pooled = np.add.reduce(embeds, axis=0) / ords.size
    hidden = np.tanh(params.hidden_w @ pooled + params.hidden_b)
    query = pooled + params.out_w @ hidden + params.out_b
    return query, EncodeCache(ordinals=ords, pooled=pooled, hidden=hidden)


def encode_backward(
    cache: EncodeCache,
    d_query: np.ndarray,
    tables: ModelTables,
    params: EncoderParams,
    grads: GradBuffer,
) -> None:
    """Chain d(loss)/d(query) into encoder parameters and input embeddings."""
    if grads.encoder_grads is None:
        raise ValueError("GradBuffer was built without encoder parameters")
    eg = grads.encoder_grads
    eg["enc_out_w"] += np.outer(d_query, cache.hidden)
    eg["enc_out_b"] += d_query
    d_act = (1.0 - cache.hidden**2) * (params.out_w.T @ d_query)
    eg["enc_hidden_w"] += np.outer(d_act, cache.pooled)
    eg["enc_hidden_b"] += d_act
    # The identity skip feeds d_query straight back to the pooled input.
    d_emb = (params.hidden_w.T @ d_act + d_query) / cache.ordinals.size

    ords = cache.ordinals
    is_item = ords >= tables.n_text
    # np.add.at handles repeated tokens within one sequence.
    if (~is_item).any():
        np.add.at(grads.d_text, ords[~is_item], d_emb)
    if is_item.any():
        np.add.at(grads.d_item_proj, ords[is_item] - tables.n_text, d_emb)
