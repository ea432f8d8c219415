# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled DBSCAN expansion.

Must stay label-for-label identical to ``_fallback.expand_clusters``.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def expand_clusters(const cnp.int64_t[::1] indptr,
                    const cnp.int64_t[::1] indices,
                    const cnp.uint8_t[::1] is_core):
    """Label density-connected components of a CSR neighbour graph.

    Clusters are seeded from core points in index order and numbered from 1.
    Border points take the label of the first cluster that reaches them;
    unreachable points keep label 0.
    """
    cdef Py_ssize_t n = is_core.shape[0]
    labels_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    queue_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] queue = queue_arr
    cdef Py_ssize_t i, head, tail, p, q, j
    cdef cnp.int64_t current = 0

    with nogil:
        for i in range(n):
            if labels[i] != 0 or not is_core[i]:
                continue
            current += 1
            labels[i] = current
            head = 0
            tail = 0
            queue[tail] = i
            tail += 1
            while head < tail:
                p = queue[head]
                head += 1
                for j in range(indptr[p], indptr[p + 1]):
                    q = indices[j]
                    if labels[q] != 0:
                        continue
                    labels[q] = current
                    if is_core[q]:
                        queue[tail] = q
                        tail += 1
    return labels_arr
