import os
import subprocess
import sys

import numpy as np
import pytest

from iotsense import _backend, _fallback
from iotsense.clustering import neighbor_graph


def _graph(seed, n=400):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 20, (n, 2))
    indptr, indices = neighbor_graph(xy, 1.2)
    core = ((np.diff(indptr) + 1) >= 4).astype(np.uint8)
    return indptr, indices, core


@pytest.mark.skipif(_backend.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_matches_fallback():
    from iotsense import _kernels

    for seed in range(20):
        indptr, indices, core = _graph(seed)
        np.testing.assert_array_equal(_kernels.expand_clusters(indptr, indices, core),
                                      _fallback.expand_clusters(indptr, indices, core))


def test_fallback_handles_empty_and_isolated():
    assert _fallback.expand_clusters(np.zeros(1, np.int64), np.zeros(0, np.int64),
                                     np.zeros(0, np.uint8)).size == 0
    labels = _fallback.expand_clusters(np.zeros(4, np.int64), np.zeros(0, np.int64),
                                       np.array([1, 0, 1], np.uint8))
    assert labels.tolist() == [1, 0, 2]


def test_env_forces_fallback():
    code = "from iotsense import _backend; print(_backend.BACKEND)"
    env = dict(os.environ, IOTSENSE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
