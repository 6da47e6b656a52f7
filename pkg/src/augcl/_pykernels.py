"""Pure-numpy versions of the compiled kernels.

Reductions are written to accumulate in the same order as the C loops
(column-by-column distances, row-ordered sums, ``cumsum`` for totals) so
results match ``augcl._ckernels`` bit for bit.
"""

import math

import numpy as np


def scatter_add_rows(values, index, n_out):
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if index.shape[0] != values.shape[0]:
        raise ValueError(f"index length {index.shape[0]} != row count {values.shape[0]}")
    if index.size and (index.min() < 0 or index.max() >= n_out):
        bad = index[(index < 0) | (index >= n_out)][0]
        raise IndexError(f"segment id {bad} out of range [0, {n_out})")
    out = np.zeros((n_out, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def _sqdist_to(points, centroid):
    acc = np.zeros(points.shape[0])
    for k in range(points.shape[1]):
        t = points[:, k] - centroid[k]
        acc += t * t
    return acc


def lloyd2(points, first, second, max_iter, tol):
    points = np.ascontiguousarray(points, dtype=np.float64)
    m, d = points.shape
    cent = np.stack([points[first], points[second]]).astype(np.float64)
    labels = np.full(m, -1, dtype=np.int64)
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        d0 = _sqdist_to(points, cent[0])
        d1 = _sqdist_to(points, cent[1])
        new = (d1 < d0).astype(np.int64)
        dist = np.where(new == 1, d1, d0)
        counts = np.bincount(new, minlength=2)
        if counts[0] == 0 or counts[1] == 0:
            j = 0 if counts[0] == 0 else 1
            new[int(np.argmax(dist))] = j
            counts = np.bincount(new, minlength=2)
        stable = bool(np.array_equal(new, labels))
        labels = new
        if stable:
            break
        shift = 0.0
        for j in range(2):
            t = np.cumsum(points[labels == j], axis=0)[-1] / counts[j]
            diff = t - cent[j]
            s = 0.0
            for k in range(d):
                s += diff[k] * diff[k]
            shift = max(shift, math.sqrt(s))
            cent[j] = t
        if shift < tol:
            break
    own = np.where(labels == 1, _sqdist_to(points, cent[1]), _sqdist_to(points, cent[0]))
    sse = float(np.cumsum(own)[-1]) if m else 0.0
    return labels, cent, sse, n_iter


def transfer2(points, start, max_sweeps):
    # scalar loops on Python floats: same operations, same order as the C version
    pts = np.ascontiguousarray(points, dtype=np.float64).tolist()
    labels = [int(v) for v in start]
    m = len(pts)
    d = len(pts[0]) if m else 0
    counts = [0, 0]
    sm = [[0.0] * d, [0.0] * d]
    c = [[0.0] * d, [0.0] * d]
    for i in range(m):
        a = labels[i]
        counts[a] += 1
        for k in range(d):
            sm[a][k] += pts[i][k]
    for a in range(2):
        if counts[a] > 0:
            c[a] = [sm[a][k] / counts[a] for k in range(d)]

    def sq(i, j):
        acc = 0.0
        for k in range(d):
            t = pts[i][k] - c[j][k]
            acc += t * t
        return acc

    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        moved = False
        for i in range(m):
            a = labels[i]
            b = 1 - a
            if counts[a] <= 1:
                continue
            da, db = sq(i, a), sq(i, b)
            if counts[b] * db / (counts[b] + 1) < counts[a] * da / (counts[a] - 1):
                counts[a] -= 1
                counts[b] += 1
                for k in range(d):
                    sm[a][k] -= pts[i][k]
                    sm[b][k] += pts[i][k]
                    c[a][k] = sm[a][k] / counts[a]
                    c[b][k] = sm[b][k] / counts[b]
                labels[i] = b
                moved = True
        if not moved:
            break
    s = 0.0
    for i in range(m):
        s += sq(i, labels[i])
    return np.array(labels, dtype=np.int64), np.array(c, dtype=np.float64).reshape(2, d), s, sweeps
