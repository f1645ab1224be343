# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled match-accumulation and threshold kernels.

Signatures and results mirror :mod:`iotflow._kernels_py` exactly.
"""

import numpy as np

from libc.stdint cimport int64_t, uint8_t

NO_MATCH = np.iinfo(np.int64).max
cdef int64_t C_NO_MATCH = 0x7FFFFFFFFFFFFFFF


def accumulate_matches(const int64_t[::1] group, const int64_t[::1] ep, const int64_t[::1] packets,
                       const int64_t[::1] offsets, const int64_t[::1] ep_ptr,
                       const int64_t[::1] ep_slot, const int64_t[::1] slot_rule,
                       int64_t[:, ::1] first, int64_t[:, ::1] pkt):
    cdef Py_ssize_t i, j, n = group.shape[0]
    cdef int64_t g, e, s, r, off
    cdef int64_t[::1] last = np.full(pkt.shape[1], -1, dtype=np.int64)
    with nogil:
        for i in range(n):
            e = ep[i]
            if e < 0:
                continue
            g = group[i]
            off = offsets[i]
            for j in range(ep_ptr[e], ep_ptr[e + 1]):
                s = ep_slot[j]
                if off < first[g, s]:
                    first[g, s] = off
                r = slot_rule[s]
                if last[r] != i:
                    last[r] = i
                    pkt[g, r] += packets[i]


def satisfaction_offsets(const int64_t[:, ::1] first, const int64_t[::1] rule_ptr,
                         const uint8_t[::1] slot_primary, const int64_t[::1] required):
    cdef Py_ssize_t n_group = first.shape[0]
    cdef Py_ssize_t n_rule = rule_ptr.shape[0] - 1
    cdef Py_ssize_t g, r, s, k, a, b, width = 0
    cdef int64_t off, cnt, key
    cdef uint8_t p, any_primary, seen
    for r in range(n_rule):
        if rule_ptr[r + 1] - rule_ptr[r] > width:
            width = rule_ptr[r + 1] - rule_ptr[r]
    matched_arr = np.zeros((n_group, n_rule), dtype=np.int64)
    primary_arr = np.zeros((n_group, n_rule), dtype=np.uint8)
    sat_arr = np.full((n_group, n_rule), -1, dtype=np.int64)
    cdef int64_t[:, ::1] matched = matched_arr
    cdef uint8_t[:, ::1] primary = primary_arr
    cdef int64_t[:, ::1] sat = sat_arr
    cdef int64_t[::1] buf_off = np.empty(max(width, 1), dtype=np.int64)
    cdef uint8_t[::1] buf_p = np.empty(max(width, 1), dtype=np.uint8)
    with nogil:
        for g in range(n_group):
            for r in range(n_rule):
                k = 0
                any_primary = 0
                for s in range(rule_ptr[r], rule_ptr[r + 1]):
                    off = first[g, s]
                    if off != C_NO_MATCH:
                        # insertion sort by offset while collecting
                        p = slot_primary[s]
                        a = k
                        while a > 0 and buf_off[a - 1] > off:
                            buf_off[a] = buf_off[a - 1]
                            buf_p[a] = buf_p[a - 1]
                            a -= 1
                        buf_off[a] = off
                        buf_p[a] = p
                        k += 1
                        if p:
                            any_primary = 1
                matched[g, r] = k
                primary[g, r] = any_primary
                if not any_primary or k < required[r]:
                    continue
                cnt = 0
                seen = 0
                for b in range(k):
                    cnt += 1
                    if buf_p[b]:
                        seen = 1
                    if cnt >= required[r] and seen:
                        sat[g, r] = buf_off[b]
                        break
    return matched_arr, primary_arr, sat_arr
