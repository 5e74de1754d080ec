# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay bit-identical to _pykernels.

Every floating-point reduction runs in the same order as the numpy fallback
and the extension is compiled with -ffp-contract=off (no fused multiply-add).
"""

import numpy as np

from libc.math cimport INFINITY

BACKEND = "cython"


def dense_rows(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b):
    cdef Py_ssize_t m = x.shape[0], kdim = x.shape[1], o = w.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double a0, a1, a2, a3, xv
    out = np.empty((m, o), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(m):
            j = 0
            # four independent outputs per pass; each one still sums k in order
            while j + 4 <= o:
                a0 = b[j]
                a1 = b[j + 1]
                a2 = b[j + 2]
                a3 = b[j + 3]
                for k in range(kdim):
                    xv = x[i, k]
                    a0 = a0 + xv * w[j, k]
                    a1 = a1 + xv * w[j + 1, k]
                    a2 = a2 + xv * w[j + 2, k]
                    a3 = a3 + xv * w[j + 3, k]
                ov[i, j] = a0
                ov[i, j + 1] = a1
                ov[i, j + 2] = a2
                ov[i, j + 3] = a3
                j += 4
            while j < o:
                a0 = b[j]
                for k in range(kdim):
                    a0 = a0 + x[i, k] * w[j, k]
                ov[i, j] = a0
                j += 1
    return out


def chamfer_nn(const double[:, :, ::1] a, const double[:, :, ::1] b):
    cdef Py_ssize_t nb = a.shape[0], na = a.shape[1], nbp = b.shape[1]
    cdef Py_ssize_t s, i, j, arg
    cdef double dx, dy, dz, d, best
    min_ab = np.empty((nb, na), dtype=np.float64)
    arg_ab = np.empty((nb, na), dtype=np.int64)
    min_ba = np.empty((nb, nbp), dtype=np.float64)
    arg_ba = np.empty((nb, nbp), dtype=np.int64)
    cdef double[:, ::1] mab = min_ab, mba = min_ba
    cdef long long[:, ::1] gab = arg_ab, gba = arg_ba
    with nogil:
        for s in range(nb):
            for i in range(na):
                best = INFINITY
                arg = 0
                for j in range(nbp):
                    dx = a[s, i, 0] - b[s, j, 0]
                    dy = a[s, i, 1] - b[s, j, 1]
                    dz = a[s, i, 2] - b[s, j, 2]
                    d = dx * dx + dy * dy
                    d = d + dz * dz
                    if d < best:
                        best = d
                        arg = j
                mab[s, i] = best
                gab[s, i] = arg
            for j in range(nbp):
                best = INFINITY
                arg = 0
                for i in range(na):
                    dx = a[s, i, 0] - b[s, j, 0]
                    dy = a[s, i, 1] - b[s, j, 1]
                    dz = a[s, i, 2] - b[s, j, 2]
                    d = dx * dx + dy * dy
                    d = d + dz * dz
                    if d < best:
                        best = d
                        arg = i
                mba[s, j] = best
                gba[s, j] = arg
    return min_ab, arg_ab, min_ba, arg_ba


cdef struct Search:
    const double* pts
    const long long* rec
    const long long* axis
    const long long* left
    const long long* right
    const double* q
    Py_ssize_t dim
    Py_ssize_t k
    Py_ssize_t count
    double* best_sq
    long long* best_rec
    long long* best_node
    long long visited
    # min-heap of pending subtrees keyed by (bound, node); offs holds one
    # per-axis offset vector per pushed entry
    double* heap_bound
    long long* heap_node
    long long* heap_slot
    Py_ssize_t heap_size
    double* offs
    Py_ssize_t n_slots


cdef inline bint _less(double sa, long long ra, double sb, long long rb) noexcept nogil:
    return sa < sb or (sa == sb and ra < rb)


cdef void _offer(Search* st, double sq, long long rec, long long node) noexcept nogil:
    cdef Py_ssize_t pos
    if st.count < st.k:
        pos = st.count
        st.count += 1
    elif _less(sq, rec, st.best_sq[st.k - 1], st.best_rec[st.k - 1]):
        pos = st.k - 1
    else:
        return
    while pos > 0 and _less(sq, rec, st.best_sq[pos - 1], st.best_rec[pos - 1]):
        st.best_sq[pos] = st.best_sq[pos - 1]
        st.best_rec[pos] = st.best_rec[pos - 1]
        st.best_node[pos] = st.best_node[pos - 1]
        pos -= 1
    st.best_sq[pos] = sq
    st.best_rec[pos] = rec
    st.best_node[pos] = node


cdef void _heap_swap(Search* st, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double b = st.heap_bound[i]
    cdef long long n = st.heap_node[i], s = st.heap_slot[i]
    st.heap_bound[i] = st.heap_bound[j]
    st.heap_node[i] = st.heap_node[j]
    st.heap_slot[i] = st.heap_slot[j]
    st.heap_bound[j] = b
    st.heap_node[j] = n
    st.heap_slot[j] = s


cdef void _heap_push(Search* st, double bound, long long node, long long slot) noexcept nogil:
    cdef Py_ssize_t i = st.heap_size, parent
    st.heap_size += 1
    st.heap_bound[i] = bound
    st.heap_node[i] = node
    st.heap_slot[i] = slot
    while i > 0:
        parent = (i - 1) // 2
        if _less(st.heap_bound[i], st.heap_node[i], st.heap_bound[parent], st.heap_node[parent]):
            _heap_swap(st, i, parent)
            i = parent
        else:
            break


cdef void _heap_pop(Search* st) noexcept nogil:
    cdef Py_ssize_t i = 0, child, last
    st.heap_size -= 1
    last = st.heap_size
    st.heap_bound[0] = st.heap_bound[last]
    st.heap_node[0] = st.heap_node[last]
    st.heap_slot[0] = st.heap_slot[last]
    while True:
        child = 2 * i + 1
        if child >= st.heap_size:
            break
        if child + 1 < st.heap_size and _less(st.heap_bound[child + 1], st.heap_node[child + 1],
                                              st.heap_bound[child], st.heap_node[child]):
            child += 1
        if _less(st.heap_bound[child], st.heap_node[child], st.heap_bound[i], st.heap_node[i]):
            _heap_swap(st, i, child)
            i = child
        else:
            break


cdef void _search(Search* st, long long root) noexcept nogil:
    cdef Py_ssize_t j
    cdef double acc, diff, bound
    cdef long long node, near, far, ax, slot, new_slot
    cdef const double* p
    cdef double* off
    cdef double* off2
    for j in range(st.dim):
        st.offs[j] = 0.0
    st.n_slots = 1
    _heap_push(st, 0.0, root, 0)
    while st.heap_size > 0:
        bound = st.heap_bound[0]
        node = st.heap_node[0]
        slot = st.heap_slot[0]
        _heap_pop(st)
        if st.count == st.k and bound > st.best_sq[st.k - 1]:
            break
        off = st.offs + slot * st.dim
        # walk down the near side, queueing each far sibling with its cell bound
        while node >= 0:
            st.visited += 1
            p = st.pts + node * st.dim
            acc = 0.0
            for j in range(st.dim):
                diff = st.q[j] - p[j]
                acc = acc + diff * diff
            _offer(st, acc, st.rec[node], node)
            ax = st.axis[node]
            diff = st.q[ax] - p[ax]
            if diff <= 0.0:
                near = st.left[node]
                far = st.right[node]
            else:
                near = st.right[node]
                far = st.left[node]
            if far >= 0:
                new_slot = st.n_slots
                off2 = st.offs + new_slot * st.dim
                for j in range(st.dim):
                    off2[j] = off[j]
                off2[ax] = diff
                bound = 0.0
                for j in range(st.dim):
                    bound = bound + off2[j] * off2[j]
                if st.count < st.k or bound <= st.best_sq[st.k - 1]:
                    st.n_slots += 1
                    _heap_push(st, bound, far, new_slot)
            node = near


def kd_query(const double[:, ::1] node_pts, const long long[::1] node_rec,
             const long long[::1] node_axis, const long long[::1] node_left,
             const long long[::1] node_right, long long root,
             const double[::1] q, Py_ssize_t k):
    """Exact k-NN over a node-ordered KD-tree by best-first search.

    Returns ``(node_indices, squared_distances, visited)`` ordered by
    (squared distance, record rank).
    """
    cdef Search st
    cdef Py_ssize_t n = node_pts.shape[0]
    cdef Py_ssize_t dim = node_pts.shape[1]
    best_sq = np.empty(k, dtype=np.float64)
    best_rec = np.empty(k, dtype=np.int64)
    best_node = np.empty(k, dtype=np.int64)
    heap_bound = np.empty(n + 1, dtype=np.float64)
    heap_node = np.empty(n + 1, dtype=np.int64)
    heap_slot = np.empty(n + 1, dtype=np.int64)
    offs = np.empty((n + 1) * dim, dtype=np.float64)
    cdef double[::1] bsq = best_sq, hb = heap_bound, ov = offs
    cdef long long[::1] brec = best_rec, bnode = best_node, hn = heap_node, hs = heap_slot
    st.pts = &node_pts[0, 0]
    st.rec = &node_rec[0]
    st.axis = &node_axis[0]
    st.left = &node_left[0]
    st.right = &node_right[0]
    st.q = &q[0]
    st.dim = dim
    st.k = k
    st.count = 0
    st.best_sq = &bsq[0]
    st.best_rec = &brec[0]
    st.best_node = &bnode[0]
    st.visited = 0
    st.heap_bound = &hb[0]
    st.heap_node = &hn[0]
    st.heap_slot = &hs[0]
    st.heap_size = 0
    st.offs = &ov[0]
    st.n_slots = 0
    with nogil:
        _search(&st, root)
    return best_node, best_sq, int(st.visited)
