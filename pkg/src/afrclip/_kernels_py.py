"""Numpy fallback for the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def ranked_sweep(scores, labels):
    n = scores.shape[0]
    labels = labels.astype(np.float64)
    n_pos = labels.sum()
    n_neg = n - n_pos
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp = np.cumsum(labels)[ends]
    fp = (ends + 1) - tp
    p_grp = np.diff(np.r_[0.0, tp])
    q_grp = np.diff(np.r_[0.0, fp])
    tp_before = tp - p_grp
    auc = float(np.sum(q_grp * (tp_before + 0.5 * p_grp)))
    f1 = 2.0 * tp / (tp + fp + n_pos)
    return float(auc / (n_pos * n_neg)), float(f1.max())


def box_mean(grid, m):
    h, w, d = grid.shape
    r = m // 2
    integ = np.zeros((h + 1, w + 1, d), dtype=np.float64)
    integ[1:, 1:] = grid.cumsum(0).cumsum(1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - r, 0)[:, None]
    y1 = np.minimum(ys + r + 1, h)[:, None]
    x0 = np.maximum(xs - r, 0)[None, :]
    x1 = np.minimum(xs + r + 1, w)[None, :]
    total = integ[y1, x1] - integ[y0, x1] - integ[y1, x0] + integ[y0, x0]
    cnt = ((y1 - y0) * (x1 - x0)).astype(np.float64)
    return total / cnt[..., None]


def bilinear_align_corners(src, out_h, out_w):
    h, w = src.shape
    sy = np.arange(out_h) * ((h - 1.0) / (out_h - 1.0) if out_h > 1 else 0.0)
    sx = np.arange(out_w) * ((w - 1.0) / (out_w - 1.0) if out_w > 1 else 0.0)
    y0 = np.minimum(sy.astype(np.intp), h - 1)
    x0 = np.minimum(sx.astype(np.intp), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    top = src[y0][:, x0] + (src[y0][:, x1] - src[y0][:, x0]) * fx
    bot = src[y1][:, x0] + (src[y1][:, x1] - src[y1][:, x0]) * fx
    return top + (bot - top) * fy
