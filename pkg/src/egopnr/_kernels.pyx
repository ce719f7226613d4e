# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

EVEN, STRATIFIED, RANDOM = 0, 1, 2


cdef inline long long _floordiv(long long a, long long b) nogil:
    # operands here are always non-negative
    return a // b


cdef void _sample_row(int kind, int n, long long start, long long S,
                      const double[:] u, long long[:] out) nogil:
    cdef int i, j, k
    cdef long long lo, hi, off, m, t, tmp
    cdef bint dup
    if kind == 0:
        for i in range(n):
            out[i] = start + _floordiv((2 * i + 1) * S, 2 * n)
    elif kind == 1:
        for i in range(n):
            lo = _floordiv(i * S + n - 1, n)
            hi = _floordiv((i + 1) * S + n - 1, n)
            off = <long long>floor(u[i] * (hi - lo))
            if off > hi - lo - 1:
                off = hi - lo - 1
            out[i] = start + lo + off
    else:
        for j in range(n):
            m = S - n + j
            t = <long long>floor(u[j] * (m + 1))
            if t > m:
                t = m
            dup = False
            for k in range(j):
                if out[k] == t:
                    dup = True
                    break
            out[j] = m if dup else t
        # insertion sort, n is small
        for j in range(1, n):
            tmp = out[j]
            k = j - 1
            while k >= 0 and out[k] > tmp:
                out[k + 1] = out[k]
                k -= 1
            out[k + 1] = tmp
        for j in range(n):
            out[j] += start


def sample_indices(int kind, int n, starts, lengths, u):
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown sampler code {kind}")
    cdef const long long[:] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const long long[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef Py_ssize_t T = st.shape[0]
    if kind == 0:
        u = np.zeros((T, n))
    cdef const double[:, :] uu = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty((T, n), dtype=np.int64)
    cdef long long[:, :] o = out
    cdef Py_ssize_t r
    with nogil:
        for r in range(T):
            _sample_row(kind, n, st[r], ln[r], uu[r], o[r])
    return out


def nearest_slots(indices, pnr):
    cdef const long long[:, :] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const long long[:] p = np.ascontiguousarray(pnr, dtype=np.int64)
    cdef Py_ssize_t T = idx.shape[0], n = idx.shape[1], r, i
    out = np.empty(T, dtype=np.int64)
    cdef long long[:] o = out
    cdef long long best, d, slot
    with nogil:
        for r in range(T):
            best = -1
            slot = 0
            for i in range(n):
                d = idx[r, i] - p[r]
                if d < 0:
                    d = -d
                if best < 0 or d < best:
                    best = d
                    slot = i
            o[r] = slot
    return out


def shift_distances(int kind, int n, starts, lengths, pnr, u):
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown sampler code {kind}")
    cdef const long long[:] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const long long[:] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef const long long[:] p = np.ascontiguousarray(pnr, dtype=np.int64)
    cdef Py_ssize_t T = st.shape[0]
    if kind == 0:
        u = np.zeros((T, n))
    cdef const double[:, :] uu = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(T, dtype=np.int64)
    cdef long long[:] o = out
    scratch = np.empty(n, dtype=np.int64)
    cdef long long[:] buf = scratch
    cdef Py_ssize_t r
    cdef int i
    cdef long long best, d
    with nogil:
        for r in range(T):
            _sample_row(kind, n, st[r], ln[r], uu[r], buf)
            best = -1
            for i in range(n):
                d = buf[i] - p[r]
                if d < 0:
                    d = -d
                if best < 0 or d < best:
                    best = d
            o[r] = best
    return out
