# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Results must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8


def negacyclic_mul(a, b, long long q):
    cdef const i64[:] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef const i64[:] bv = np.ascontiguousarray(b, dtype=np.int64)
    cdef Py_ssize_t n = av.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef i64[:] ov = out
    cdef i64[:] am = np.empty(n, dtype=np.int64)
    cdef i64[:] bm = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef long long acc
    for j in range(n):
        am[j] = ((av[j] % q) + q) % q
        bm[j] = ((bv[j] % q) + q) % q
    # n * q^2 stays far below 2^63 for 16-bit q, so reduce once per output.
    for i in range(n):
        acc = 0
        for j in range(i + 1):
            acc += am[j] * bm[i - j]
        for j in range(i + 1, n):
            acc -= am[j] * bm[n + i - j]
        acc %= q
        if acc < 0:
            acc += q
        ov[i] = acc
    return out


def bb84_channel(const u8[:] alice_bits, const u8[:] alice_bases,
                 const u8[:] eve_mask, const u8[:] eve_bases, const u8[:] eve_rand,
                 const u8[:] flip_mask, const u8[:] bob_bases, const u8[:] bob_rand):
    cdef Py_ssize_t n = alice_bits.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef u8[:] ov = out
    cdef Py_ssize_t i
    cdef u8 bit, basis
    for i in range(n):
        bit = alice_bits[i]
        basis = alice_bases[i]
        if eve_mask[i]:
            if eve_bases[i] != basis:
                bit = eve_rand[i]
            basis = eve_bases[i]
        if flip_mask[i]:
            bit ^= 1
        if bob_bases[i] == basis:
            ov[i] = bit
        else:
            ov[i] = bob_rand[i]
    return out


cdef inline int _parity_diff(const u8[:] a, u8[:] b, const i64[:] order,
                             Py_ssize_t lo, Py_ssize_t hi) nogil:
    cdef int p = 0
    cdef Py_ssize_t i
    for i in range(lo, hi):
        p ^= a[order[i]] ^ b[order[i]]
    return p


def parity_bisect_pass(alice, bob, order, Py_ssize_t block_size):
    cdef const u8[:] av = alice
    cdef u8[:] bv = bob
    cdef const i64[:] ov = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t total = ov.shape[0]
    cdef Py_ssize_t start, lo, hi, mid
    cdef long corrections = 0, leaked = 0
    start = 0
    while start < total:
        lo = start
        hi = start + block_size
        if hi > total:
            hi = total
        start += block_size
        leaked += 1
        if not _parity_diff(av, bv, ov, lo, hi):
            continue
        while hi - lo > 1:
            mid = (lo + hi) // 2
            leaked += 1
            if _parity_diff(av, bv, ov, lo, mid):
                hi = mid
            else:
                lo = mid
        bv[ov[lo]] ^= 1
        corrections += 1
    return corrections, leaked
