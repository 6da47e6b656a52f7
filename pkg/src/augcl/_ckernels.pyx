"""Compiled hot loops: row scatter-add, two-centroid Lloyd iterations and point transfers.

Summation order matches ``augcl._pykernels`` exactly, so both backends
return bit-identical results on the same inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def scatter_add_rows(const double[:, ::1] values, const cnp.int64_t[::1] index, Py_ssize_t n_out):
    cdef Py_ssize_t m = values.shape[0]
    cdef Py_ssize_t d = values.shape[1]
    cdef Py_ssize_t i, k, r
    if index.shape[0] != m:
        raise ValueError(f"index length {index.shape[0]} != row count {m}")
    out = np.zeros((n_out, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(m):
        r = index[i]
        if r < 0 or r >= n_out:
            raise IndexError(f"segment id {r} out of range [0, {n_out})")
        for k in range(d):
            o[r, k] += values[i, k]
    return out


cdef inline double _sqdist(const double[:, ::1] p, Py_ssize_t i, double[:, ::1] c, Py_ssize_t j, Py_ssize_t d) nogil:
    cdef double acc = 0.0, t
    cdef Py_ssize_t k
    for k in range(d):
        t = p[i, k] - c[j, k]
        acc += t * t
    return acc


def lloyd2(const double[:, ::1] points, Py_ssize_t first, Py_ssize_t second, int max_iter, double tol):
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t i, k, j, it, worst
    cdef int n_iter = 0
    cdef bint stable
    cdef double d0, d1, shift, s, t, best
    cdef Py_ssize_t counts[2]

    cent = np.empty((2, d), dtype=np.float64)
    sums = np.empty((2, d), dtype=np.float64)
    labels = np.full(m, -1, dtype=np.int64)
    new = np.empty(m, dtype=np.int64)
    dist = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] c = cent
    cdef double[:, ::1] sm = sums
    cdef cnp.int64_t[::1] lab = labels
    cdef cnp.int64_t[::1] nw = new
    cdef double[::1] dd = dist

    for k in range(d):
        c[0, k] = points[first, k]
        c[1, k] = points[second, k]

    for it in range(max_iter):
        n_iter = it + 1
        counts[0] = 0
        counts[1] = 0
        for i in range(m):
            d0 = _sqdist(points, i, c, 0, d)
            d1 = _sqdist(points, i, c, 1, d)
            if d1 < d0:
                nw[i] = 1
                dd[i] = d1
            else:
                nw[i] = 0
                dd[i] = d0
            counts[nw[i]] += 1
        if counts[0] == 0 or counts[1] == 0:
            j = 0 if counts[0] == 0 else 1
            worst = 0
            best = dd[0]
            for i in range(1, m):
                if dd[i] > best:
                    best = dd[i]
                    worst = i
            nw[worst] = j
            counts[j] += 1
            counts[1 - j] -= 1
        stable = True
        for i in range(m):
            if nw[i] != lab[i]:
                stable = False
            lab[i] = nw[i]
        if stable:
            break
        for j in range(2):
            for k in range(d):
                sm[j, k] = 0.0
        for i in range(m):
            j = lab[i]
            for k in range(d):
                sm[j, k] += points[i, k]
        shift = 0.0
        for j in range(2):
            s = 0.0
            for k in range(d):
                t = sm[j, k] / counts[j]
                s += (t - c[j, k]) * (t - c[j, k])
                c[j, k] = t
            s = sqrt(s)
            if s > shift:
                shift = s
        if shift < tol:
            break

    s = 0.0
    for i in range(m):
        s += _sqdist(points, i, c, lab[i], d)
    return labels, cent, s, n_iter


def transfer2(const double[:, ::1] points, const cnp.int64_t[::1] start, int max_sweeps):
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t i, k, a, b
    cdef int sweeps = 0
    cdef bint moved
    cdef double da, db, s
    cdef Py_ssize_t counts[2]

    cent = np.zeros((2, d), dtype=np.float64)
    sums = np.zeros((2, d), dtype=np.float64)
    labels = np.array(start, dtype=np.int64)
    cdef double[:, ::1] c = cent
    cdef double[:, ::1] sm = sums
    cdef cnp.int64_t[::1] lab = labels

    counts[0] = 0
    counts[1] = 0
    for i in range(m):
        a = lab[i]
        counts[a] += 1
        for k in range(d):
            sm[a, k] += points[i, k]
    for a in range(2):
        if counts[a] > 0:
            for k in range(d):
                c[a, k] = sm[a, k] / counts[a]

    for sweeps in range(1, max_sweeps + 1):
        moved = False
        for i in range(m):
            a = lab[i]
            b = 1 - a
            if counts[a] <= 1:
                continue
            da = _sqdist(points, i, c, a, d)
            db = _sqdist(points, i, c, b, d)
            if counts[b] * db / (counts[b] + 1) < counts[a] * da / (counts[a] - 1):
                counts[a] -= 1
                counts[b] += 1
                for k in range(d):
                    sm[a, k] -= points[i, k]
                    sm[b, k] += points[i, k]
                    c[a, k] = sm[a, k] / counts[a]
                    c[b, k] = sm[b, k] / counts[b]
                lab[i] = b
                moved = True
        if not moved:
            break

    s = 0.0
    for i in range(m):
        s += _sqdist(points, i, c, lab[i], d)
    return labels, cent, s, sweeps
