# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: iterated SHA-256 via libcrypto and the pairwise SNR matrix."""

from libc.math cimport log10, pow, sqrt
from libc.string cimport memcpy

import numpy as np

cdef extern from "openssl/sha.h" nogil:
    ctypedef struct SHA256_CTX:
        pass
    int SHA256_Init(SHA256_CTX *c)
    int SHA256_Update(SHA256_CTX *c, const void *data, size_t n)
    int SHA256_Final(unsigned char *md, SHA256_CTX *c)


# the one-shot SHA256() does a provider lookup per call on OpenSSL 3
cdef inline void _sha256(const unsigned char *d, size_t n, unsigned char *md) noexcept nogil:
    cdef SHA256_CTX ctx
    SHA256_Init(&ctx)
    SHA256_Update(&ctx, d, n)
    SHA256_Final(md, &ctx)


def sha256_iterate(bytes data, Py_ssize_t times):
    cdef unsigned char buf[32]
    cdef const unsigned char *src = data
    cdef size_t n = len(data)
    cdef Py_ssize_t i
    with nogil:
        _sha256(src, n, buf)
        for i in range(times - 1):
            _sha256(buf, 32, buf)
    return buf[:32]


def sha256_chain(bytes data, Py_ssize_t n):
    cdef unsigned char buf[32]
    cdef unsigned char tmp[32]
    cdef const unsigned char *src = data
    cdef Py_ssize_t i
    out = [None] * n
    _sha256(src, len(data), buf)
    out[0] = buf[:32]
    for i in range(1, n):
        _sha256(buf, 32, tmp)
        memcpy(buf, tmp, 32)
        out[i] = buf[:32]
    return out


def snr_matrix(xs, ys, double tx_power_dbm, double ref_loss_db, double ref_distance_m,
               double exponent, double noise_floor_dbm, double min_distance_m):
    cdef double[::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    result = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = result
    cdef Py_ssize_t i, j
    cdef double dx, dy, d, loss
    with nogil:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                dx = x[j] - x[i]
                dy = y[j] - y[i]
                d = sqrt(dx * dx + dy * dy)
                if d < min_distance_m:
                    d = min_distance_m
                loss = ref_loss_db + 10.0 * exponent * log10(d / ref_distance_m)
                out[i, j] = pow(10.0, (tx_power_dbm - loss - noise_floor_dbm) / 10.0)
    return result
