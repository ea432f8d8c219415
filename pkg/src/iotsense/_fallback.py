"""Pure-Python kernels used when the compiled extension is not built."""
from collections import deque

import numpy as np


def expand_clusters(indptr, indices, is_core):
    """Label density-connected components of a CSR neighbour graph.

    Clusters are seeded from core points in index order and numbered from 1.
    Border points take the label of the first cluster that reaches them;
    unreachable points keep label 0.
    """
    indptr = np.asarray(indptr, dtype=np.int64).tolist()
    indices = np.asarray(indices, dtype=np.int64).tolist()
    core = np.asarray(is_core, dtype=bool).tolist()
    n = len(core)
    labels = [0] * n
    current = 0
    for i in range(n):
        if labels[i] or not core[i]:
            continue
        current += 1
        labels[i] = current
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in indices[indptr[p]:indptr[p + 1]]:
                if labels[q]:
                    continue
                labels[q] = current
                if core[q]:
                    queue.append(q)
    return np.asarray(labels, dtype=np.int64)
