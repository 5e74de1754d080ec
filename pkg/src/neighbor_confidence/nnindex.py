"""Exact nearest-neighbor search over embedding vectors with a KD-tree.

Each tree node holds one record. Construction sorts the records by id, then
recursively splits at the median (by coordinate, ties by id) along the axis
of largest spread (lowest axis on ties); records below the median go left.
Queries return hits ordered by (distance, id). Distances are Euclidean and
computed as the square root of a sum of squared coordinate differences
accumulated in axis order, so they agree bit for bit with a linear scan
doing the same sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, ParameterError, ShapeError


@dataclass(frozen=True)
class NeighborHit:
    id: int
    distance: float


class NeighborIndex:
    """Immutable KD-tree. Safe to query from many threads."""

    def __init__(self, ids, vectors):
        vecs = np.asarray(vectors, dtype=np.float64)
        ids = [int(i) for i in ids]
        if len(ids) == 0:
            raise ParameterError("cannot build an index over an empty record set")
        if vecs.ndim != 2 or vecs.shape[0] != len(ids):
            raise ShapeError(f"expected {len(ids)} vectors of one dimension, got shape {vecs.shape}")
        if len(set(ids)) != len(ids):
            raise DataError("duplicate record id in index input")
        if not np.all(np.isfinite(vecs)):
            raise DataError("index vectors must be finite")
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self.ids = np.array([ids[i] for i in order], dtype=np.uint64)
        self.points = np.ascontiguousarray(vecs[order])
        self.dim = int(vecs.shape[1])
        self._build()
        for arr in (self.ids, self.points, self.node_rec, self.node_axis, self.node_left, self.node_right):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def _build(self) -> None:
        n = len(self)
        node_rec = np.empty(n, dtype=np.int64)
        node_axis = np.empty(n, dtype=np.int64)
        node_left = np.full(n, -1, dtype=np.int64)
        node_right = np.full(n, -1, dtype=np.int64)
        next_node = 0
        pts = self.points

        # preorder numbering with an explicit stack: (record ranks, parent node, is_right)
        stack = [(np.arange(n), -1, False)]
        while stack:
            recs, parent, is_right = stack.pop()
            node = next_node
            next_node += 1
            if parent >= 0:
                (node_right if is_right else node_left)[parent] = node
            sub = pts[recs]
            spread = sub.max(axis=0) - sub.min(axis=0)
            axis = int(np.argmax(spread))
            order = recs[np.lexsort((recs, sub[:, axis]))]
            mid = len(order) // 2
            node_rec[node] = order[mid]
            node_axis[node] = axis
            if mid + 1 < len(order):
                stack.append((order[mid + 1 :], node, True))
            if mid > 0:
                stack.append((order[:mid], node, False))
        self.root = 0
        self.node_rec = node_rec
        self.node_axis = node_axis
        self.node_left = node_left
        self.node_right = node_right
        self.node_points = np.ascontiguousarray(pts[node_rec])

    def _tree_arrays(self):
        return (self.node_points, self.node_rec, self.node_axis, self.node_left, self.node_right, self.root)

    def search(self, q, k: int = 1, impl=None):
        """Raw query: ``(hits, visited_node_count)``."""
        qv = np.asarray(q, dtype=np.float64)
        if qv.shape != (self.dim,):
            raise ShapeError(f"query must have dimension {self.dim}, got shape {qv.shape}")
        if not 1 <= k <= len(self):
            raise ParameterError(f"k must be in [1, {len(self)}], got {k}")
        if not np.all(np.isfinite(qv)):
            raise DataError("query vector must be finite")
        nodes, sqs, visited = kernels.kd_query(self._tree_arrays(), qv, k, impl=impl)
        dists = np.sqrt(sqs)
        recs = self.node_rec[nodes]
        hits = sorted(
            ((float(d), int(self.ids[r])) for d, r in zip(dists, recs)),
        )
        return [NeighborHit(i, d) for d, i in hits], visited


def build_index(records) -> NeighborIndex:
    """Build from an iterable of ``(id, vector)`` pairs."""
    records = list(records)
    if not records:
        raise ParameterError("cannot build an index over an empty record set")
    ids = [r[0] for r in records]
    dims = {len(r[1]) for r in records}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent vector dimensions: {sorted(dims)}")
    return NeighborIndex(ids, np.array([r[1] for r in records], dtype=np.float64))


def query_nearest(index: NeighborIndex, q, k: int = 1) -> list[NeighborHit]:
    return index.search(q, k)[0]


def nn_distance(index: NeighborIndex, q, k: int = 1) -> float:
    """Distance to the nearest stored vector; for ``k > 1`` the mean of the k nearest."""
    hits = query_nearest(index, q, k)
    total = 0.0
    for h in hits:
        total += h.distance
    return total / k


def leave_self_out_distances(index: NeighborIndex, ids, vectors, k: int = 1) -> list[float]:
    """Mean-of-k neighbor distance of stored records, excluding each record itself.

    If the record's own id is not among its k+1 nearest (an exact duplicate
    with a lower id can outrank it), the farthest of the k+1 hits is dropped.
    """
    if k + 1 > len(index):
        raise ParameterError(f"leave-self-out with k={k} needs at least {k + 1} indexed records")
    out = []
    for rid, v in zip(ids, vectors):
        hits = query_nearest(index, v, k + 1)
        kept = [h for h in hits if h.id != int(rid)]
        kept = kept[:k]
        total = 0.0
        for h in kept:
            total += h.distance
        out.append(total / k)
    return out
