# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled k-nearest-neighbour averaging.

Brute force over the training rows with a bounded max-heap keyed on
(distance, row index), so equal distances resolve to the lower row index.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline bint _after(double da, Py_ssize_t ia, double db, Py_ssize_t ib) nogil:
    return da > db or (da == db and ia > ib)


cdef void _sift_down(double* hd, Py_ssize_t* hi, Py_ssize_t size, Py_ssize_t pos) noexcept nogil:
    cdef Py_ssize_t child, other
    cdef double td
    cdef Py_ssize_t ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        other = child + 1
        if other < size and _after(hd[other], hi[other], hd[child], hi[child]):
            child = other
        if not _after(hd[child], hi[child], hd[pos], hi[pos]):
            break
        td = hd[pos]; hd[pos] = hd[child]; hd[child] = td
        ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
        pos = child


def knn_mean(const double[:, ::1] train_x, const double[:, ::1] train_y,
             const double[:, ::1] query_x, Py_ssize_t k):
    """Neighbour means of every column of ``train_y`` (m x r) at each query row."""
    cdef Py_ssize_t m = train_x.shape[0]
    cdef Py_ssize_t r = train_y.shape[1]
    cdef Py_ssize_t q = train_x.shape[1]
    cdef Py_ssize_t nq = query_x.shape[0]
    cdef Py_ssize_t a, i, j, c, size
    cdef double dist, diff
    out = np.zeros((nq, r), dtype=np.float64)
    cdef double[:, ::1] res = out
    heap_d = np.empty(k, dtype=np.float64)
    heap_i = np.empty(k, dtype=np.intp)
    cdef double[::1] hd = heap_d
    cdef Py_ssize_t[::1] hi = heap_i
    with nogil:
        for a in range(nq):
            size = 0
            for i in range(m):
                dist = 0.0
                for c in range(q):
                    diff = query_x[a, c] - train_x[i, c]
                    dist = dist + diff * diff
                if size < k:
                    # grow heap: append then sift up
                    j = size
                    hd[j] = dist
                    hi[j] = i
                    size = size + 1
                    while j > 0 and _after(hd[j], hi[j], hd[(j - 1) // 2], hi[(j - 1) // 2]):
                        hd[j], hd[(j - 1) // 2] = hd[(j - 1) // 2], hd[j]
                        hi[j], hi[(j - 1) // 2] = hi[(j - 1) // 2], hi[j]
                        j = (j - 1) // 2
                elif dist < hd[0]:
                    hd[0] = dist
                    hi[0] = i
                    _sift_down(&hd[0], &hi[0], size, 0)
            for j in range(k):
                for c in range(r):
                    res[a, c] = res[a, c] + train_y[hi[j], c]
            for c in range(r):
                res[a, c] = res[a, c] / k
    return out
