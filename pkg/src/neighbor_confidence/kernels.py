"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``NC_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

if os.environ.get("NC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.BACKEND


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def dense_rows(x, w, b, impl=None) -> np.ndarray:
    """``x @ w.T + b`` with each output summed over inputs in index order.

    Rows are computed independently, so permuting the rows of ``x`` permutes
    the output rows bit-exactly.
    """
    return (impl or _impl).dense_rows(_f64(x), _f64(w), _f64(b))


def chamfer_nn(a, b, impl=None):
    """Batched nearest-neighbor search between point sets.

    ``a`` is (B, Na, 3) and ``b`` is (B, Nb, 3). Returns the squared distance
    from each point to its nearest counterpart in the other set plus the index
    of that counterpart (lowest index on ties), for both directions.
    """
    return (impl or _impl).chamfer_nn(_f64(a), _f64(b))


def kd_query(tree_arrays, q, k: int, impl=None):
    pts, rec, axis, left, right, root = tree_arrays
    return (impl or _impl).kd_query(pts, rec, axis, left, right, root, _f64(q), k)


def available_backends() -> dict:
    backends = {"python": _pykernels}
    try:
        from . import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends
