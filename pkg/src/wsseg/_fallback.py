"""Pure-Python twin of the compiled kernels in ``_kernels.pyx``.

Used when the extension is not built (or ``WSSEG_PURE=1``). Results are
identical to the compiled path, just slower.
"""

import heapq

import numpy as np


def _box_gap(lo, hi, node, qx, qy, qz):
    gx = gy = gz = 0.0
    if qx < lo[node][0]:
        gx = lo[node][0] - qx
    elif qx > hi[node][0]:
        gx = qx - hi[node][0]
    if qy < lo[node][1]:
        gy = lo[node][1] - qy
    elif qy > hi[node][1]:
        gy = qy - hi[node][1]
    if qz < lo[node][2]:
        gz = lo[node][2] - qz
    elif qz > hi[node][2]:
        gz = qz - hi[node][2]
    return gx * gx + gy * gy + gz * gz


def query_knn(points, perm, start, stop, left, right, lo, hi, queries, k):
    pts = points.tolist()
    perm = perm.tolist()
    start = start.tolist()
    stop = stop.tolist()
    left = left.tolist()
    right = right.tolist()
    lo = lo.tolist()
    hi = hi.tolist()

    nq = queries.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k), dtype=np.float64)
    for q, (qx, qy, qz) in enumerate(queries.tolist()):
        # max-heap of (distance, index) stored negated in a min-heap
        heap = []
        stack = [(0, _box_gap(lo, hi, 0, qx, qy, qz))]
        while stack:
            node, lb = stack.pop()
            if len(heap) == k and lb > -heap[0][0]:
                continue
            if left[node] < 0:
                for j in range(start[node], stop[node]):
                    p = perm[j]
                    x, y, z = pts[p]
                    dx = x - qx
                    dy = y - qy
                    dz = z - qz
                    d = dx * dx + dy * dy + dz * dz
                    if len(heap) < k:
                        heapq.heappush(heap, (-d, -p))
                    else:
                        wd, wp = -heap[0][0], -heap[0][1]
                        if d < wd or (d == wd and p < wp):
                            heapq.heapreplace(heap, (-d, -p))
                continue
            a, b = left[node], right[node]
            la = _box_gap(lo, hi, a, qx, qy, qz)
            lb_ = _box_gap(lo, hi, b, qx, qy, qz)
            if la <= lb_:
                stack.append((b, lb_))
                stack.append((a, la))
            else:
                stack.append((a, la))
                stack.append((b, lb_))
        found = sorted((-nd, -np_) for nd, np_ in heap)
        for j, (d, p) in enumerate(found):
            out_idx[q, j] = p
            out_d[q, j] = d
    return out_idx, out_d
