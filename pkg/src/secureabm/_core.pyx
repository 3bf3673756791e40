# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled secret-sharing kernels.

Same contracts as ``secureabm._pykernels``; results must agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cdef extern from "share_kernel.h" nogil:
    int sk_session_partials(const uint64_t *keys, const int64_t *offsets, int64_t n_sessions,
                            const uint64_t *values, int64_t m, uint64_t p, int shift,
                            uint64_t *partials)
    int sk_session_shares(const uint64_t *keys, const int64_t *offsets, int64_t n_sessions,
                          const uint64_t *values, int64_t m, uint64_t p, int shift,
                          uint64_t *shares)

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t GOLDEN2 = 0xD1B54A32D192ED03ULL
cdef int ATTEMPT_SHIFT = 48


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _word(uint64_t key, uint64_t ctr) nogil:
    return _mix64(key + (ctr + 1) * GOLDEN)


cdef inline uint64_t _uniform_mod(uint64_t key, uint64_t ctr, uint64_t p, int shift) nogil:
    cdef uint64_t v = _word(key, ctr) >> shift
    cdef uint64_t attempt = 0
    while v >= p:
        attempt += 1
        v = _word(key, ctr | (attempt << ATTEMPT_SHIFT)) >> shift
    return v


cdef inline uint64_t _add(uint64_t a, uint64_t b, uint64_t p) nogil:
    cdef uint64_t s = a + b
    return s - p if s >= p else s


cdef inline uint64_t _sub(uint64_t a, uint64_t b, uint64_t p) nogil:
    return a - b if a >= b else a + (p - b)


cdef int _shift_for(object p):
    return 64 - int(p).bit_length()


def uniform_mod(keys, counters, p):
    k, c = np.broadcast_arrays(np.asarray(keys, dtype=np.uint64),
                               np.asarray(counters, dtype=np.uint64))
    shape = k.shape
    cdef const uint64_t[::1] kf = np.ascontiguousarray(k).ravel()
    cdef const uint64_t[::1] cf = np.ascontiguousarray(c).ravel()
    out = np.empty(kf.shape[0], dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t pp = p
    cdef int shift = _shift_for(p)
    cdef Py_ssize_t i
    with nogil:
        for i in range(kf.shape[0]):
            o[i] = _uniform_mod(kf[i], cf[i], pp, shift)
    return out.reshape(shape)


def uniform01(keys, counters):
    k, c = np.broadcast_arrays(np.asarray(keys, dtype=np.uint64),
                               np.asarray(counters, dtype=np.uint64))
    shape = k.shape
    cdef const uint64_t[::1] kf = np.ascontiguousarray(k).ravel()
    cdef const uint64_t[::1] cf = np.ascontiguousarray(c).ravel()
    out = np.empty(kf.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double inv = 1.0 / 9007199254740992.0
    with nogil:
        for i in range(kf.shape[0]):
            o[i] = <double>(_word(kf[i], cf[i]) >> 11) * inv
    return out.reshape(shape)


def group_mod_sum(values, offsets, p):
    cdef const uint64_t[:, ::1] v = np.ascontiguousarray(values, dtype=np.uint64)
    cdef const int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t n_sessions = off.shape[0] - 1
    cdef Py_ssize_t m = v.shape[1]
    out = np.zeros((n_sessions, m), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    cdef uint64_t pp = p
    cdef Py_ssize_t s, i, c
    with nogil:
        for s in range(n_sessions):
            for i in range(off[s], off[s + 1]):
                for c in range(m):
                    o[s, c] = _add(o[s, c], v[i, c], pp)
    return out


def _prepare(keys, offsets, values):
    ks = np.ascontiguousarray(keys, dtype=np.uint64)
    off = np.ascontiguousarray(offsets, dtype=np.int64)
    v = np.ascontiguousarray(values, dtype=np.uint64)
    if v.ndim != 2 or off.shape[0] != ks.shape[0] + 1 or off[-1] != v.shape[0]:
        raise ValueError("inconsistent session batch layout")
    return ks, off, v


def session_shares(keys, offsets, values, p):
    ks_a, off_a, v_a = _prepare(keys, offsets, values)
    sizes = np.diff(off_a)
    out = np.zeros((int((sizes * sizes).sum()), v_a.shape[1]), dtype=np.uint64)
    cdef const uint64_t[::1] ks = ks_a
    cdef const int64_t[::1] off = off_a
    cdef const uint64_t[:, ::1] v = v_a
    cdef uint64_t[:, ::1] o = out
    if ks.shape[0] == 0 or o.shape[0] == 0:
        return out
    cdef uint64_t pp = p
    cdef int shift = _shift_for(p)
    with nogil:
        sk_session_shares(&ks[0], &off[0], ks.shape[0], &v[0, 0], v.shape[1], pp, shift, &o[0, 0])
    return out


def session_partials(keys, offsets, values, p):
    ks_a, off_a, v_a = _prepare(keys, offsets, values)
    out = np.zeros_like(v_a)
    cdef const uint64_t[::1] ks = ks_a
    cdef const int64_t[::1] off = off_a
    cdef const uint64_t[:, ::1] v = v_a
    cdef uint64_t[:, ::1] o = out
    if ks.shape[0] == 0 or o.shape[0] == 0:
        return out
    cdef uint64_t pp = p
    cdef int shift = _shift_for(p)
    cdef int rc
    with nogil:
        rc = sk_session_partials(&ks[0], &off[0], ks.shape[0], &v[0, 0], v.shape[1], pp, shift, &o[0, 0])
    if rc != 0:
        raise MemoryError()
    return out
