import os
import subprocess
import sys

import numpy as np
import pytest

from neighbor_confidence import kernels
from neighbor_confidence.nnindex import NeighborIndex

BACKENDS = kernels.available_backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@needs_both
def test_dense_rows_bit_identical():
    rng = np.random.default_rng(0)
    for m, k, o in [(1, 3, 32), (50, 32, 64), (7, 64, 5), (3, 16, 1)]:
        x, w, b = rng.normal(size=(m, k)), rng.normal(size=(o, k)), rng.normal(size=o)
        a = kernels.dense_rows(x, w, b, impl=BACKENDS["python"])
        c = kernels.dense_rows(x, w, b, impl=BACKENDS["cython"])
        assert a.tobytes() == c.tobytes()
        assert np.allclose(a, x @ w.T + b, rtol=1e-12, atol=1e-12)


def test_dense_rows_row_permutation_exact():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(20, 32)), rng.normal(size=(64, 32)), rng.normal(size=64)
    perm = rng.permutation(20)
    for impl in BACKENDS.values():
        full = kernels.dense_rows(x, w, b, impl=impl)
        assert kernels.dense_rows(x[perm], w, b, impl=impl).tobytes() == full[perm].tobytes()


@needs_both
def test_chamfer_nn_bit_identical():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 17, 3))
    b = rng.normal(size=(4, 9, 3))
    b[:, 3] = b[:, 1]  # duplicate points exercise the lowest-index tie rule
    pa = kernels.chamfer_nn(a, b, impl=BACKENDS["python"])
    ca = kernels.chamfer_nn(a, b, impl=BACKENDS["cython"])
    for x, y in zip(pa, ca):
        assert x.tobytes() == y.tobytes()
    assert not np.any(pa[1] == 3)


@needs_both
def test_kd_query_identical_results_and_cost():
    rng = np.random.default_rng(3)
    index = NeighborIndex(range(500), rng.normal(size=(500, 8)))
    for q in rng.normal(size=(30, 8)):
        for k in (1, 4):
            py_hits, py_visited = index.search(q, k, impl=BACKENDS["python"])
            c_hits, c_visited = index.search(q, k, impl=BACKENDS["cython"])
            assert py_hits == c_hits
            assert py_visited == c_visited


def test_pure_python_switch():
    env = dict(os.environ, NC_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import neighbor_confidence as nc; print(nc.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
