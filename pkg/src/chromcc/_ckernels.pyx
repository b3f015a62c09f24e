# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics mirror ``_pykernels`` exactly."""
import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport atan2, floor, sqrt, M_PI
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()

DEF CHROMA_RES = 128
DEF N_LUM = 20


def bin_pixels(const double[:, ::1] rgb, const uint8_t[::1] valid, double median,
               int num_threads=1):
    cdef Py_ssize_t n = rgb.shape[0]
    chroma_np = np.empty(n, dtype=np.int32)
    lum_np = np.empty(n, dtype=np.int32)
    cdef int[::1] chroma = chroma_np
    cdef int[::1] lum = lum_np
    cdef Py_ssize_t k
    cdef double r, g, b, s, nrm, theta, yv, fu, ft, fy
    for k in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        r = rgb[k, 0]
        g = rgb[k, 1]
        b = rgb[k, 2]
        s = r + g + b
        if valid[k] == 0 or s <= 0.0:
            chroma[k] = -1
            lum[k] = -1
            continue
        nrm = sqrt(r * r + g * g + b * b)
        fu = floor((g / nrm) * CHROMA_RES)
        if fu > CHROMA_RES - 1:
            fu = CHROMA_RES - 1
        theta = atan2(b / nrm, r / nrm)
        ft = floor(theta * (2 * CHROMA_RES) / M_PI)
        if ft > CHROMA_RES - 1:
            ft = CHROMA_RES - 1
        chroma[k] = <int>fu * CHROMA_RES + <int>ft
        yv = s / median
        if yv > 4.0:
            yv = 4.0
        fy = floor(yv / 0.2)
        if fy > N_LUM - 1:
            fy = N_LUM - 1
        lum[k] = <int>fy
    return chroma_np, lum_np


def l1_norms(const double[:, ::1] rgb, int num_threads=1):
    cdef Py_ssize_t n = rgb.shape[0]
    out_np = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_np
    cdef Py_ssize_t k
    for k in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        out[k] = rgb[k, 0] + rgb[k, 1] + rgb[k, 2]
    return out_np


def score_cells(const int[::1] cell_c, const int[::1] cell_y, const double[::1] counts,
                const int[:, ::1] gmap_t, const double[:, ::1] table, int num_threads=1):
    cdef Py_ssize_t m = gmap_t.shape[0]
    cdef Py_ssize_t ncell = cell_c.shape[0]
    out_np = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_np
    cdef Py_ssize_t i, k
    cdef double acc
    for i in prange(m, nogil=True, num_threads=num_threads, schedule="dynamic"):
        acc = 0.0
        for k in range(ncell):
            acc = acc + counts[k] * table[cell_y[k], gmap_t[i, cell_c[k]]]
        out[i] = acc
    return out_np


def cell_scores(const int[::1] cell_c, const int[::1] cell_y,
                const int[:, ::1] gmap_t, const double[:, ::1] table, int num_threads=1):
    cdef Py_ssize_t m = gmap_t.shape[0]
    cdef Py_ssize_t ncell = cell_c.shape[0]
    out_np = np.empty((ncell, m), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t i, k
    for k in prange(ncell, nogil=True, num_threads=num_threads, schedule="static"):
        for i in range(m):
            out[k, i] = table[cell_y[k], gmap_t[i, cell_c[k]]]
    return out_np


def scatter_gradient(const int[::1] cell_c, const int[::1] cell_y, const double[::1] counts,
                     const int[:, ::1] gmap_t, const double[::1] coef, double[:, ::1] grad):
    cdef Py_ssize_t m = gmap_t.shape[0]
    cdef Py_ssize_t ncell = cell_c.shape[0]
    cdef Py_ssize_t i, k
    cdef double ci
    with nogil:
        for i in range(m):
            ci = coef[i]
            if ci == 0.0:
                continue
            for k in range(ncell):
                grad[cell_y[k], gmap_t[i, cell_c[k]]] += counts[k] * ci


cdef uint64_t _CRC_TABLE[256]
cdef uint64_t _CRC_POLY = 0xC96C5795D7870F42ULL


cdef void _init_crc_table():
    cdef int n, j
    cdef uint64_t c
    for n in range(256):
        c = n
        for j in range(8):
            if c & 1:
                c = (c >> 1) ^ _CRC_POLY
            else:
                c = c >> 1
        _CRC_TABLE[n] = c


_init_crc_table()


def crc64(const uint8_t[::1] data, uint64_t crc=0):
    cdef Py_ssize_t k, n = data.shape[0]
    cdef uint64_t c = ~crc
    with nogil:
        for k in range(n):
            c = _CRC_TABLE[(c ^ data[k]) & 0xFF] ^ (c >> 8)
    return ~c
