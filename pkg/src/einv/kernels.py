"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled module ``einv._ckernels`` is used when importable; set
``EINV_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

import numpy as np

_CHUNK_ELEMENTS = 4_000_000


def knn_mean_numpy(train_x: np.ndarray, train_y: np.ndarray, query_x: np.ndarray, k: int) -> np.ndarray:
    """Mean of each ``train_y`` column (m x r) over the ``k`` nearest rows.

    Ties in distance go to the lower row index.
    """
    m = train_x.shape[0]
    out = np.empty((query_x.shape[0], train_y.shape[1]))
    step = max(1, _CHUNK_ELEMENTS // max(m, 1))
    for start in range(0, query_x.shape[0], step):
        qx = query_x[start:start + step]
        dist = np.zeros((qx.shape[0], m))
        # per-coordinate accumulation keeps the same summation order as the C loop
        for c in range(train_x.shape[1]):
            diff = qx[:, c, None] - train_x[None, :, c]
            dist += diff * diff
        if k == m:
            out[start:start + step] = train_y.mean(axis=0)
            continue
        kth = np.partition(dist, k - 1, axis=1)[:, k - 1, None]
        below = dist < kth
        at = dist == kth
        room = k - below.sum(axis=1, keepdims=True)
        chosen = below | (at & (np.cumsum(at, axis=1) <= room))
        out[start:start + step] = (chosen @ train_y) / k
    return out


try:
    if os.environ.get("EINV_PURE_PYTHON"):
        raise ImportError("compiled kernels disabled by EINV_PURE_PYTHON")
    from ._ckernels import knn_mean as _knn_mean_c
except ImportError:
    _knn_mean_c = None

BACKEND = "compiled" if _knn_mean_c is not None else "numpy"


def knn_mean(train_x, train_y, query_x, k: int, backend: str | None = None) -> np.ndarray:
    """kNN means at ``query_x``; ``train_y`` may be a vector or an (m x r) matrix.

    The output has the shape of ``train_y`` with ``m`` replaced by the number
    of queries.
    """
    train_x = np.ascontiguousarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=float)
    vector = train_y.ndim == 1
    train_y = np.ascontiguousarray(train_y.reshape(len(train_y), -1))
    query_x = np.ascontiguousarray(query_x, dtype=float)
    backend = backend or BACKEND
    if backend == "compiled":
        if _knn_mean_c is None:
            raise RuntimeError("compiled kernels are not available")
        out = _knn_mean_c(train_x, train_y, query_x, int(k))
    else:
        out = knn_mean_numpy(train_x, train_y, query_x, int(k))
    return out[:, 0] if vector else out
