# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot elementwise and selection kernels.

Signatures and results mirror ``_pykernels`` exactly; see that module for
the semantics.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def leaky_relu(x, double slope):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    cdef double v
    for i in range(n):
        v = flat[i]
        out[i] = v if v > 0 else slope * v
    return out.reshape(np.shape(x))


def leaky_relu_mask(x, double slope):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    for i in range(n):
        out[i] = 1.0 if flat[i] > 0 else slope
    return out.reshape(np.shape(x))


def band_penalty(x_sim, t_sim, double epsilon, double penalty=1.0):
    xb, tb = np.broadcast_arrays(np.asarray(x_sim, dtype=np.float64),
                                 np.asarray(t_sim, dtype=np.float64))
    shape = xb.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xs = np.ascontiguousarray(xb).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ts = np.ascontiguousarray(tb).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] val = np.empty_like(xs)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] der = np.empty_like(xs)
    cdef Py_ssize_t i, n = xs.shape[0]
    cdef double up, lo
    for i in range(n):
        up = xs[i] - (ts[i] + epsilon)
        lo = (ts[i] - epsilon) - xs[i]
        if up < 0:
            up = 0.0
        if lo < 0:
            lo = 0.0
        val[i] = penalty * (up * up + lo * lo)
        der[i] = penalty * 2.0 * (up - lo)
    return val.reshape(shape), der.reshape(shape)


cdef inline bint _better(double sa, Py_ssize_t ja, double sb, Py_ssize_t jb):
    # strict "a ranks above b": higher score, then lower column
    return sa > sb or (sa == sb and ja < jb)


cdef void _sift_down(double* hs, Py_ssize_t* hj, Py_ssize_t size, Py_ssize_t pos):
    # min-heap on rank: root holds the worst of the kept candidates
    cdef Py_ssize_t child, worst
    cdef double ts
    cdef Py_ssize_t tj
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        worst = child
        if child + 1 < size and _better(hs[child], hj[child], hs[child + 1], hj[child + 1]):
            worst = child + 1
        if _better(hs[worst], hj[worst], hs[pos], hj[pos]):
            break
        ts = hs[pos]; hs[pos] = hs[worst]; hs[worst] = ts
        tj = hj[pos]; hj[pos] = hj[worst]; hj[worst] = tj
        pos = worst


def topk_rows(scores, Py_ssize_t k, exclude=None):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t n_rows = s.shape[0], n_cols = s.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] skip
    if exclude is None:
        skip = np.full(n_rows, -1, dtype=np.int64)
    else:
        skip = np.ascontiguousarray(exclude, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((n_rows, k), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] heap_s = np.empty(max(k, 1))
    cdef double* hs = <double*> heap_s.data
    cdef Py_ssize_t* hj
    cdef Py_ssize_t[::1] hj_view = np.empty(max(k, 1), dtype=np.intp)
    hj = &hj_view[0]
    cdef Py_ssize_t i, j, size, pos, parent, a
    cdef double v, ts
    cdef Py_ssize_t tj
    for i in range(n_rows):
        size = 0
        for j in range(n_cols):
            if j == skip[i]:
                continue
            v = s[i, j]
            if size < k:
                # push, sift up
                pos = size
                hs[pos] = v; hj[pos] = j
                size += 1
                while pos > 0:
                    parent = (pos - 1) // 2
                    if _better(hs[pos], hj[pos], hs[parent], hj[parent]):
                        break
                    ts = hs[pos]; hs[pos] = hs[parent]; hs[parent] = ts
                    tj = hj[pos]; hj[pos] = hj[parent]; hj[parent] = tj
                    pos = parent
            elif _better(v, j, hs[0], hj[0]):
                hs[0] = v; hj[0] = j
                _sift_down(hs, hj, size, 0)
        if size < k:
            raise ValueError(f"row {i} has only {size} candidates for k={k}")
        # pop worst-first into the tail of the output row
        for a in range(k - 1, -1, -1):
            out[i, a] = hj[0]
            size -= 1
            hs[0] = hs[size]; hj[0] = hj[size]
            _sift_down(hs, hj, size, 0)
    return out


def segment_mean(values, labels, Py_ssize_t n_segments):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] y = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, c, col
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sums = np.zeros((n_segments, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] counts = np.zeros(n_segments)
    for i in range(n):
        c = y[i]
        if c < 0 or c >= n_segments:
            raise IndexError(f"label {c} outside [0, {n_segments})")
        counts[c] += 1.0
        for col in range(d):
            sums[c, col] += x[i, col]
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts
