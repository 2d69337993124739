# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled k-nearest-neighbour query over the flattened kd-tree.

Mirrors ``wsseg._fallback.query_knn`` operation for operation; both must
return identical arrays, including the tie order.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef inline bint _before(f64 da, i64 ia, f64 db, i64 ib) nogil:
    # lexicographic (distance, index) order
    return da < db or (da == db and ia < ib)


cdef inline void _sift_down(f64* hd, i64* hi, Py_ssize_t size, Py_ssize_t pos) nogil:
    # max-heap on (distance, index)
    cdef Py_ssize_t child
    cdef f64 td
    cdef i64 ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _before(hd[child], hi[child], hd[child + 1], hi[child + 1]):
            child += 1
        if _before(hd[pos], hi[pos], hd[child], hi[child]):
            td = hd[pos]; hd[pos] = hd[child]; hd[child] = td
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            break


cdef inline void _sift_up(f64* hd, i64* hi, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef f64 td
    cdef i64 ti
    while pos > 0:
        parent = (pos - 1) // 2
        if _before(hd[parent], hi[parent], hd[pos], hi[pos]):
            td = hd[pos]; hd[pos] = hd[parent]; hd[parent] = td
            ti = hi[pos]; hi[pos] = hi[parent]; hi[parent] = ti
            pos = parent
        else:
            break


cdef inline f64 _box_gap(const f64[:, ::1] lo, const f64[:, ::1] hi,
                         Py_ssize_t node, f64 qx, f64 qy, f64 qz) nogil:
    cdef f64 gx = 0.0, gy = 0.0, gz = 0.0
    if qx < lo[node, 0]:
        gx = lo[node, 0] - qx
    elif qx > hi[node, 0]:
        gx = qx - hi[node, 0]
    if qy < lo[node, 1]:
        gy = lo[node, 1] - qy
    elif qy > hi[node, 1]:
        gy = qy - hi[node, 1]
    if qz < lo[node, 2]:
        gz = lo[node, 2] - qz
    elif qz > hi[node, 2]:
        gz = qz - hi[node, 2]
    return gx * gx + gy * gy + gz * gz


def query_knn(const f64[:, ::1] points, const i64[::1] perm,
              const i64[::1] start, const i64[::1] stop,
              const i64[::1] left, const i64[::1] right,
              const f64[:, ::1] lo, const f64[:, ::1] hi,
              const f64[:, ::1] queries, Py_ssize_t k):
    """Exact k nearest neighbours for every row of ``queries``.

    Returns ``(indices, sq_distances)``, each of shape (Q, k), rows ordered
    by (squared distance, point index).
    """
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t nnodes = start.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k), dtype=np.float64)
    cdef i64[:, ::1] oi = out_idx
    cdef f64[:, ::1] od = out_d

    hd_arr = np.empty(k, dtype=np.float64)
    hi_arr = np.empty(k, dtype=np.int64)
    cdef f64[::1] hd = hd_arr
    cdef i64[::1] hidx = hi_arr
    # depth-first stack of (node, lower bound); depth <= number of nodes
    st_node_arr = np.empty(nnodes + 1, dtype=np.int64)
    st_lb_arr = np.empty(nnodes + 1, dtype=np.float64)
    cdef i64[::1] st_node = st_node_arr
    cdef f64[::1] st_lb = st_lb_arr

    cdef Py_ssize_t q, size, top, node, j, p, a, b, n
    cdef f64 qx, qy, qz, dx, dy, dz, d, lb, la, lbb, td
    cdef i64 ti

    with nogil:
        for q in range(nq):
            qx = queries[q, 0]
            qy = queries[q, 1]
            qz = queries[q, 2]
            size = 0
            top = 0
            st_node[0] = 0
            st_lb[0] = _box_gap(lo, hi, 0, qx, qy, qz)
            top = 1
            while top > 0:
                top -= 1
                node = st_node[top]
                lb = st_lb[top]
                if size == k and lb > hd[0]:
                    continue
                if left[node] < 0:
                    for j in range(start[node], stop[node]):
                        p = perm[j]
                        dx = points[p, 0] - qx
                        dy = points[p, 1] - qy
                        dz = points[p, 2] - qz
                        d = dx * dx + dy * dy + dz * dz
                        if size < k:
                            hd[size] = d
                            hidx[size] = p
                            _sift_up(&hd[0], &hidx[0], size)
                            size += 1
                        elif _before(d, p, hd[0], hidx[0]):
                            hd[0] = d
                            hidx[0] = p
                            _sift_down(&hd[0], &hidx[0], size, 0)
                    continue
                a = left[node]
                b = right[node]
                la = _box_gap(lo, hi, a, qx, qy, qz)
                lbb = _box_gap(lo, hi, b, qx, qy, qz)
                # push the farther child first so the nearer one is popped next
                if la <= lbb:
                    st_node[top] = b; st_lb[top] = lbb; top += 1
                    st_node[top] = a; st_lb[top] = la; top += 1
                else:
                    st_node[top] = a; st_lb[top] = la; top += 1
                    st_node[top] = b; st_lb[top] = lbb; top += 1
            # heap sort into ascending (distance, index)
            n = size
            while n > 1:
                n -= 1
                td = hd[0]; hd[0] = hd[n]; hd[n] = td
                ti = hidx[0]; hidx[0] = hidx[n]; hidx[n] = ti
                _sift_down(&hd[0], &hidx[0], n, 0)
            for j in range(size):
                oi[q, j] = hidx[j]
                od[q, j] = hd[j]
    return out_idx, out_d
