"""Binary model snapshots.

Little-endian layout::

    magic   "HSRC"
    u32     format version (1)
    u32     model dim d, u32 item dim k
    u64     n_text, u64 n_items, u64 n_item_clusters
    u8      precision (0 = f32, 1 = f64)
    then row-major payloads:
        text table, raw item table, projection weight + bias, centroid table,
        unified cluster-assignment array (u32),
        encoder MLP (hidden weight/bias, output weight/bias),
        u64 metadata length + JSON metadata (vocab words, item ids, config)

Round trips are bit-identical.  Wrong magic or version and truncated files
raise :class:`SnapshotFormatError`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterMap
from .encoder import EncoderParams
from .exceptions import SnapshotFormatError
from .tables import EmbeddingTable, ModelTables, ProjectionHead
from .tokens import TokenSpace, Vocabulary

MAGIC = b"HSRC"
FORMAT_VERSION = 1
_PRECISION_CODE = {"f32": 0, "f64": 1}
_PRECISION_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


@dataclass
class ModelSnapshot:
    """A trained (or freshly initialized) model plus everything needed to use it."""

    tables: ModelTables
    encoder: EncoderParams
    cluster_map: ClusterMap
    vocab: Vocabulary
    item_ids: list[str]
    config: dict = field(default_factory=dict)
    name: str = "model"
    price_edges: list[float] | None = None

    @property
    def space(self) -> TokenSpace:
        return TokenSpace(n_text=self.tables.n_text, n_items=self.tables.n_items)


def _write_array(fh, arr: np.ndarray, dtype) -> None:
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C"))


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise SnapshotFormatError(f"truncated snapshot: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_array(fh, shape, dtype) -> np.ndarray:
    n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    arr = np.frombuffer(_read_exact(fh, n_bytes), dtype=dtype).reshape(shape)
    return np.ascontiguousarray(arr)


def save_snapshot(snapshot: ModelSnapshot, path) -> None:
    tables = snapshot.tables
    dtype = np.dtype("<f4") if tables.text.precision == "f32" else np.dtype("<f8")
    meta = json.dumps(
        {
            "name": snapshot.name,
            "vocab_words": snapshot.vocab.words,
            "item_ids": snapshot.item_ids,
            "config": snapshot.config,
            "price_edges": snapshot.price_edges,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            struct.pack(
                "<IIIQQQB",
                FORMAT_VERSION,
                tables.dim,
                tables.item_dim,
                tables.n_text,
                tables.n_items,
                tables.n_item_clusters,
                _PRECISION_CODE[tables.text.precision],
            )
        )
        _write_array(fh, tables.text.data, dtype)
        _write_array(fh, tables.item_raw.data, dtype)
        _write_array(fh, tables.projection.weight, dtype)
        _write_array(fh, tables.projection.bias, dtype)
        _write_array(fh, tables.centroids.data, dtype)
        _write_array(fh, snapshot.cluster_map.assignment(), np.dtype("<u4"))
        for arr in snapshot.encoder.parameter_arrays().values():
            _write_array(fh, arr, dtype)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)


def load_snapshot(path) -> ModelSnapshot:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r}; not a model snapshot")
        version, dim, item_dim, n_text, n_items, n_item_clusters, precision = struct.unpack(
            "<IIIQQQB", _read_exact(fh, struct.calcsize("<IIIQQQB"))
        )
        if version != FORMAT_VERSION:
            raise SnapshotFormatError(f"unsupported snapshot version {version}")
        if precision not in _PRECISION_DTYPE:
            raise SnapshotFormatError(f"unknown precision code {precision}")
        dtype = _PRECISION_DTYPE[precision]

        text = _read_array(fh, (n_text, dim), dtype)
        item_raw = _read_array(fh, (n_items, item_dim), dtype)
        proj_w = _read_array(fh, (dim, item_dim), dtype)
        proj_b = _read_array(fh, (dim,), dtype)
        centroids = _read_array(fh, (n_item_clusters, dim), dtype)
        assignment = _read_array(fh, (n_text + n_items,), np.dtype("<u4"))
        hidden_w = _read_array(fh, (dim, dim), dtype)
        hidden_b = _read_array(fh, (dim,), dtype)
        out_w = _read_array(fh, (dim, dim), dtype)
        out_b = _read_array(fh, (dim,), dtype)
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8))
        meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))

    tables = ModelTables(
        EmbeddingTable(text),
        EmbeddingTable(item_raw),
        ProjectionHead(proj_w, proj_b),
        EmbeddingTable(centroids),
    )
    item_assignment = assignment[n_text:].astype(np.int64) - n_text
    cluster_map = ClusterMap(int(n_text), item_assignment, int(n_item_clusters))
    encoder = EncoderParams(hidden_w, hidden_b, out_w, out_b)
    return ModelSnapshot(
        tables=tables,
        encoder=encoder,
        cluster_map=cluster_map,
        vocab=Vocabulary(meta["vocab_words"]),
        item_ids=list(meta["item_ids"]),
        config=meta.get("config", {}),
        name=meta.get("name", "model"),
        price_edges=meta.get("price_edges"),
    )
