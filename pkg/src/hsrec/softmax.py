"""Full and two-level softmax over the mixed text/item token space.

Full mode normalizes one dot-product logit per token over the entire space.
Two-level mode factorizes the distribution: a softmax over clusters (text
singletons plus item clusters) times a softmax over the chosen cluster's
members,

    P(w | H) = P(cluster(w) | H) * P(w | cluster(w), H)

which needs only ``n_clusters + |cluster(w)|`` dot products per training
example instead of one per token.  All probability math runs in the log
domain with max-shifted logsumexp; queries are promoted to float64 so
reductions accumulate in double precision even over float32 tables.

A :class:`CostCounter` tallies d-dimensional dot products so the cost claims
are measurable rather than asserted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterMap
from .tables import GradBuffer, ModelTables

MODES = ("full", "twolevel")


@dataclass
class CostCounter:
    """Counts d-dimensional dot products spent computing logits."""

    dots: int = 0

    def add(self, n: int) -> None:
        self.dots += int(n)

    def reset(self) -> None:
        self.dots = 0

    def to_json(self) -> str:
        return json.dumps({"dots": self.dots})


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted log softmax; safe for logit magnitudes up to ~1e300."""
    x = np.asarray(logits, dtype=np.float64)
    m = x.max()
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum())


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def _query64(query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError(f"query must be a 1-D vector, got shape {q.shape}")
    return q


def full_logits(query, tables: ModelTables) -> np.ndarray:
    q = _query64(query)
    return np.concatenate([tables.text.data @ q, tables.item_projected() @ q])


def cluster_logits(query, tables: ModelTables) -> np.ndarray:
    """First-level logits: text rows double as singleton-cluster centroids."""
    q = _query64(query)
    return np.concatenate([tables.text.data @ q, tables.centroids.data @ q])


def full_logprob(query, ordinal: int, tables: ModelTables, counter: CostCounter | None = None) -> float:
    """log P(token | H) under the flat softmax over V union I."""
    logits = full_logits(query, tables)
    if counter is not None:
        counter.add(tables.n_total)
    return float(logits[ordinal] - _logsumexp(logits))


def two_level_logprob(
    query,
    ordinal: int,
    tables: ModelTables,
    cluster_map: ClusterMap,
    counter: CostCounter | None = None,
) -> float:
    """log P(token | H) = log P(cluster | H) + log P(token | cluster, H)."""
    q = _query64(query)
    cl = log_softmax(cluster_logits(q, tables))
    cluster_id = cluster_map.cluster_of(ordinal)
    if ordinal < tables.n_text:
        # Singleton cluster: the conditional is exactly 1.
        if counter is not None:
            counter.add(cluster_map.n_clusters + 1)
        return float(cl[ordinal])
    members = cluster_map.item_members(cluster_id - cluster_map.n_text)
    member_logits = tables.item_projected()[members] @ q
    if counter is not None:
        counter.add(cluster_map.n_clusters + members.size)
    item_index = ordinal - tables.n_text
    pos = int(np.flatnonzero(members == item_index)[0])
    return float(cl[cluster_id] + member_logits[pos] - _logsumexp(member_logits))


def member_log_conditionals(
    query: np.ndarray, tables: ModelTables, cluster_map: ClusterMap, item_cluster: int
) -> tuple[np.ndarray, np.ndarray]:
    """(member item indices, their log P(item | cluster)) for one item cluster.

    This is the single primitive shared by enumeration and the pruned search,
    so both produce bitwise-identical per-token log-probabilities.
    """
    members = cluster_map.item_members(item_cluster)
    logits = tables.item_projected()[members] @ query
    return members, logits - _logsumexp(logits)


def score_all(
    query,
    tables: ModelTables,
    cluster_map: ClusterMap | None = None,
    mode: str = "twolevel",
    counter: CostCounter | None = None,
) -> np.ndarray:
    """Exact log-probability of every token under the chosen mode.

    Enumeration over the whole space; intended as the oracle surface for
    evaluation and tests on desk-scale catalogs.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    q = _query64(query)
    if mode == "full":
        if counter is not None:
            counter.add(tables.n_total)
        return log_softmax(full_logits(q, tables))
    if cluster_map is None:
        raise ValueError("two-level scoring requires a cluster map")
    cl = log_softmax(cluster_logits(q, tables))
    out = np.empty(tables.n_total, dtype=np.float64)
    out[: tables.n_text] = cl[: tables.n_text]
    n_text = tables.n_text
    for j in range(cluster_map.n_item_clusters):
        members, log_cond = member_log_conditionals(q, tables, cluster_map, j)
        out[n_text + members] = cl[n_text + j] + log_cond
    if counter is not None:
        counter.add(cluster_map.n_clusters + tables.n_items)
    return out


def nll_and_grad(
    query,
    target: int,
    tables: ModelTables,
    cluster_map: ClusterMap | None,
    mode: str = "twolevel",
    grads: GradBuffer | None = None,
    counter: CostCounter | None = None,
):
    """Cross-entropy loss and exact analytic gradients for one example.

    Returns ``(loss, d_query, grads)``.  Head-side gradients accumulate into
    ``grads`` (allocated if not supplied): text rows, projected item rows
    (chained through the head by ``GradBuffer.finalize``), and centroid rows.
    In two-level mode only the cluster centroids and the target cluster's
    members receive gradient.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    q = _query64(query)
    if not 0 <= target < tables.n_total:
        raise ValueError(f"target ordinal {target} out of range")
    if grads is None:
        grads = GradBuffer(tables)
    grads.n_examples += 1
    n_text = tables.n_text

    if mode == "full":
        logits = full_logits(q, tables)
        if counter is not None:
            counter.add(tables.n_total)
        log_norm = _logsumexp(logits)
        loss = log_norm - float(logits[target])
        p = np.exp(logits - log_norm)
        p[target] -= 1.0
        d_query = tables.text.data.T @ p[:n_text] + tables.item_projected().T @ p[n_text:]
        grads.d_text += np.outer(p[:n_text], q)
        grads.d_item_proj += np.outer(p[n_text:], q)
        return loss, d_query, grads

    if cluster_map is None:
        raise ValueError("two-level mode requires a cluster map")
    cs = cluster_logits(q, tables)
    if counter is not None:
        counter.add(cluster_map.n_clusters)
    log_norm = _logsumexp(cs)
    target_cluster = cluster_map.cluster_of(target)
    loss = log_norm - float(cs[target_cluster])
    p = np.exp(cs - log_norm)
    p[target_cluster] -= 1.0
    d_query = tables.text.data.T @ p[:n_text] + tables.centroids.data.T @ p[n_text:]
    grads.d_text += np.outer(p[:n_text], q)
    grads.d_centroids += np.outer(p[n_text:], q)

    if target >= n_text:
        members = cluster_map.item_members(target_cluster - n_text)
        if counter is not None:
            counter.add(members.size)
        member_logits = tables.item_projected()[members] @ q
        m_norm = _logsumexp(member_logits)
        pos = int(np.flatnonzero(members == target - n_text)[0])
        loss += m_norm - float(member_logits[pos])
        pm = np.exp(member_logits - m_norm)
        pm[pos] -= 1.0
        d_query = d_query + tables.item_projected()[members].T @ pm
        grads.d_item_proj[members] += np.outer(pm, q)
    else:
        # Text target: its singleton's conditional is 1, so no second level.
        if counter is not None:
            counter.add(1)
    return loss, d_query, grads
