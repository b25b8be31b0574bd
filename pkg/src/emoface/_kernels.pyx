# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled spiral gather / scatter-add kernels.

Index convention matches ``_kernels_py``: spiral entries equal to V are
padding, frames before the first one are padding (zero) or, with
``replicate``, copies of frame 0.
"""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()


def spiral_gather(const double[:, :, :, ::1] x, const cnp.int64_t[:, ::1] spiral,
                  int delta, bint replicate=False):
    cdef Py_ssize_t B = x.shape[0], V = x.shape[1], T = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t L = spiral.shape[1]
    cdef Py_ssize_t width = delta * L * C
    out_arr = np.empty((B, V, T, width), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, v, t, d, l, src_t, s, off
    cdef size_t nbytes = C * sizeof(double)
    with nogil:
        for b in range(B):
            for v in range(V):
                for t in range(T):
                    off = 0
                    for d in range(delta):
                        src_t = t - delta + 1 + d
                        if src_t < 0 and replicate:
                            src_t = 0
                        for l in range(L):
                            s = spiral[v, l]
                            if src_t < 0 or s >= V:
                                memset(&out[b, v, t, off], 0, nbytes)
                            else:
                                memcpy(&out[b, v, t, off], &x[b, s, src_t, 0], nbytes)
                            off += C
    return out_arr


def spiral_scatter(const double[:, :, :, ::1] g, const cnp.int64_t[:, ::1] spiral,
                   int delta, Py_ssize_t C, bint replicate=False):
    cdef Py_ssize_t B = g.shape[0], V = g.shape[1], T = g.shape[2]
    cdef Py_ssize_t L = spiral.shape[1]
    gx_arr = np.zeros((B, V, T, C), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, v, t, d, l, c, src_t, s, off
    with nogil:
        for b in range(B):
            for v in range(V):
                for t in range(T):
                    off = 0
                    for d in range(delta):
                        src_t = t - delta + 1 + d
                        if src_t < 0 and replicate:
                            src_t = 0
                        for l in range(L):
                            s = spiral[v, l]
                            if src_t >= 0 and s < V:
                                for c in range(C):
                                    gx[b, s, src_t, c] += g[b, v, t, off + c]
                            off += C
    return gx_arr
