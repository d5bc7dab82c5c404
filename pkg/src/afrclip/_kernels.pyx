# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics must match afrclip._kernels_py exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def ranked_sweep(const double[::1] scores, const cnp.uint8_t[::1] labels):
    """Single pass over scores sorted in descending order.

    Returns ``(auroc, max_f1)`` with ties counted as one half for AUROC and
    thresholds taken at every distinct score for max-F1.
    """
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t i = 0, j
    cdef double tp = 0.0, fp = 0.0, p_grp, q_grp, n_pos = 0.0, n_neg
    cdef double auc = 0.0, f1, best = 0.0
    for j in range(n):
        n_pos += labels[j]
    n_neg = n - n_pos
    with nogil:
        while i < n:
            j = i
            p_grp = 0.0
            while j < n and scores[j] == scores[i]:
                p_grp += labels[j]
                j += 1
            q_grp = (j - i) - p_grp
            auc += q_grp * (tp + 0.5 * p_grp)
            tp += p_grp
            fp += q_grp
            if tp > 0:
                f1 = 2.0 * tp / (tp + fp + n_pos)
                if f1 > best:
                    best = f1
            i = j
    return auc / (n_pos * n_neg), best


def box_mean(const double[:, :, ::1] grid, int m):
    """Count-normalised mean over the in-bounds m x m window of every cell."""
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1], d = grid.shape[2]
    cdef Py_ssize_t r = m // 2
    cdef Py_ssize_t y, x, c, y0, y1, x0, x1
    cdef double cnt
    # integral image with a zero border row/column
    integ_np = np.zeros((h + 1, w + 1, d), dtype=np.float64)
    out_np = np.empty((h, w, d), dtype=np.float64)
    cdef double[:, :, ::1] integ = integ_np
    cdef double[:, :, ::1] out = out_np
    with nogil:
        for y in range(h):
            for x in range(w):
                for c in range(d):
                    integ[y + 1, x + 1, c] = (grid[y, x, c] + integ[y, x + 1, c]
                                              + integ[y + 1, x, c] - integ[y, x, c])
        for y in range(h):
            y0 = y - r if y >= r else 0
            y1 = y + r + 1 if y + r + 1 <= h else h
            for x in range(w):
                x0 = x - r if x >= r else 0
                x1 = x + r + 1 if x + r + 1 <= w else w
                cnt = (y1 - y0) * (x1 - x0)
                for c in range(d):
                    out[y, x, c] = (integ[y1, x1, c] - integ[y0, x1, c]
                                    - integ[y1, x0, c] + integ[y0, x0, c]) / cnt
    return out_np


def bilinear_align_corners(const double[:, ::1] src, int out_h, int out_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef Py_ssize_t y, x, y0, x0, y1, x1
    cdef double sy, sx, fy, fx, top, bot
    cdef double scale_y = (h - 1.0) / (out_h - 1.0) if out_h > 1 else 0.0
    cdef double scale_x = (w - 1.0) / (out_w - 1.0) if out_w > 1 else 0.0
    out_np = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    with nogil:
        for y in range(out_h):
            sy = y * scale_y
            y0 = <Py_ssize_t>sy
            if y0 > h - 1:
                y0 = h - 1
            y1 = y0 + 1 if y0 + 1 < h else h - 1
            fy = sy - y0
            for x in range(out_w):
                sx = x * scale_x
                x0 = <Py_ssize_t>sx
                if x0 > w - 1:
                    x0 = w - 1
                x1 = x0 + 1 if x0 + 1 < w else w - 1
                fx = sx - x0
                top = src[y0, x0] + (src[y0, x1] - src[y0, x0]) * fx
                bot = src[y1, x0] + (src[y1, x1] - src[y1, x0]) * fx
                out[y, x] = top + (bot - top) * fy
    return out_np
