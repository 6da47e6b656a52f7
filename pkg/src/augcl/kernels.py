"""Kernel dispatch: compiled Cython core when built, numpy fallback otherwise.

Set ``AUGCL_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from augcl import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("AUGCL_PURE_PYTHON"):
    try:
        from augcl import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def scatter_add_rows(values, index, n_out):
    """Sum rows of ``values`` into ``n_out`` buckets given by ``index``."""
    return _impl.scatter_add_rows(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(index, dtype=np.int64),
        int(n_out),
    )


def lloyd2(points, first, second, max_iter, tol):
    """Two-centroid Lloyd iterations seeded at rows ``first`` and ``second``.

    Returns ``(labels, centroids, sse, n_iter)``.
    """
    return _impl.lloyd2(
        np.ascontiguousarray(points, dtype=np.float64), int(first), int(second), int(max_iter), float(tol)
    )


def transfer2(points, labels, max_sweeps):
    """Single-point transfer refinement of a two-cluster labelling.

    Moves a point to the other cluster whenever that lowers the total SSE,
    sweeping rows in order until a full sweep moves nothing. Returns
    ``(labels, centroids, sse, n_sweeps)``.
    """
    return _impl.transfer2(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int64),
        int(max_sweeps),
    )
