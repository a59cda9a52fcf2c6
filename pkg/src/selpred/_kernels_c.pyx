# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in :mod:`selpred._kernels_py`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def triplet_loss_grad(double[:, ::1] z, double[:, ::1] zp, double margin, bint want_grad=True):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    cdef Py_ssize_t i, k, j
    cdef double scale = 1.0 / (n * (n - 1))
    cdef double loss = 0.0, pos, dist, h, s, inv_pos, inv_dist
    cdef double[::1] dpos = np.empty(n)
    dz_arr = np.zeros((n, d))
    dzp_arr = np.zeros((n, d))
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dzp = dzp_arr

    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += (z[i, j] - zp[i, j]) * (z[i, j] - zp[i, j])
            dpos[i] = sqrt(s)
        for i in range(n):
            pos = dpos[i]
            inv_pos = 1.0 / pos if pos > 0.0 else 0.0
            for k in range(n):
                if k == i:
                    continue
                s = 0.0
                for j in range(d):
                    s += (z[i, j] - zp[k, j]) * (z[i, j] - zp[k, j])
                dist = sqrt(s)
                h = pos - dist + margin
                if h <= 0.0:
                    continue
                loss += h
                if not want_grad:
                    continue
                inv_dist = 1.0 / dist if dist > 0.0 else 0.0
                for j in range(d):
                    # d pos / d z_i - d dist / d z_i
                    dz[i, j] += scale * ((z[i, j] - zp[i, j]) * inv_pos
                                         - (z[i, j] - zp[k, j]) * inv_dist)
                    dzp[i, j] -= scale * (z[i, j] - zp[i, j]) * inv_pos
                    dzp[k, j] += scale * (z[i, j] - zp[k, j]) * inv_dist
    if not want_grad:
        return loss * scale, None, None
    return loss * scale, dz_arr, dzp_arr


def confusion_matrix(cnp.int64_t[::1] labels, cnp.int64_t[::1] preds, mask, Py_ssize_t n_classes):
    cdef cnp.uint8_t[::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    out_arr = np.zeros((n_classes, n_classes), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(labels.shape[0]):
            if m[i]:
                out[labels[i], preds[i]] += 1
    return out_arr


def sweep_confusion(double[::1] pmax, cnp.int64_t[::1] labels, cnp.int64_t[::1] preds,
                    double[::1] grid, Py_ssize_t n_classes):
    cdef Py_ssize_t n = pmax.shape[0], g = grid.shape[0]
    cdef cnp.int64_t[::1] order = np.argsort(np.negative(pmax), kind="stable").astype(np.int64)
    out_arr = np.zeros((g, n_classes, n_classes), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] acc = np.zeros((n_classes, n_classes), dtype=np.int64)
    cdef Py_ssize_t gi, ptr = 0, a, b, s
    with nogil:
        # grid ascending: walk it backwards so the retained prefix only grows
        for gi in range(g - 1, -1, -1):
            while ptr < n and pmax[order[ptr]] >= grid[gi]:
                s = order[ptr]
                acc[labels[s], preds[s]] += 1
                ptr += 1
            for a in range(n_classes):
                for b in range(n_classes):
                    out[gi, a, b] = acc[a, b]
    return out_arr
