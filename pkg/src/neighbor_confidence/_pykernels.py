"""Pure numpy / Python versions of the compiled kernels.

Same arithmetic order as ``_ckernels.pyx`` so both backends agree bit for bit.
"""

from __future__ import annotations

import heapq

import numpy as np

BACKEND = "python"


def dense_rows(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # column-at-a-time accumulation: each output sums its k terms in order
    out = np.empty((x.shape[0], w.shape[0]), dtype=np.float64)
    out[...] = b
    for k in range(x.shape[1]):
        out += x[:, k : k + 1] * w[:, k]
    return out


def chamfer_nn(a: np.ndarray, b: np.ndarray):
    dx = a[:, :, None, 0] - b[:, None, :, 0]
    dy = a[:, :, None, 1] - b[:, None, :, 1]
    dz = a[:, :, None, 2] - b[:, None, :, 2]
    d = dx * dx + dy * dy
    d = d + dz * dz
    arg_ab = d.argmin(axis=2)
    arg_ba = d.argmin(axis=1)
    min_ab = np.take_along_axis(d, arg_ab[:, :, None], axis=2)[:, :, 0]
    min_ba = np.take_along_axis(d, arg_ba[:, None, :], axis=1)[:, 0, :]
    return min_ab, arg_ab.astype(np.int64), min_ba, arg_ba.astype(np.int64)


def kd_query(node_pts, node_rec, node_axis, node_left, node_right, root, q, k):
    pts = node_pts.tolist()
    rec = node_rec.tolist()
    axis = node_axis.tolist()
    left = node_left.tolist()
    right = node_right.tolist()
    qv = [float(v) for v in q]
    dim = len(qv)
    best: list[tuple[float, int, int]] = []
    visited = 0

    def offer(sq: float, r: int, node: int) -> None:
        if len(best) == k:
            wsq, wr, _ = best[-1]
            if not (sq < wsq or (sq == wsq and r < wr)):
                return
            best.pop()
        pos = len(best)
        while pos > 0:
            psq, pr, _ = best[pos - 1]
            if sq < psq or (sq == psq and r < pr):
                pos -= 1
            else:
                break
        best.insert(pos, (sq, r, node))

    # best-first over subtrees keyed by (cell bound, node)
    heap = [(0.0, int(root), [0.0] * dim)]
    while heap:
        bound, node, off = heapq.heappop(heap)
        if len(best) == k and bound > best[-1][0]:
            break
        while node >= 0:
            visited += 1
            p = pts[node]
            acc = 0.0
            for j in range(dim):
                diff = qv[j] - p[j]
                acc = acc + diff * diff
            offer(acc, rec[node], node)
            ax = axis[node]
            diff = qv[ax] - p[ax]
            if diff <= 0.0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            if far >= 0:
                off2 = list(off)
                off2[ax] = diff
                b = 0.0
                for j in range(dim):
                    b = b + off2[j] * off2[j]
                if len(best) < k or b <= best[-1][0]:
                    heapq.heappush(heap, (b, far, off2))
            node = near

    nodes = np.array([n for _, _, n in best], dtype=np.int64)
    sqs = np.array([s for s, _, _ in best], dtype=np.float64)
    return nodes, sqs, visited
