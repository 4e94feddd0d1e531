"""Pure NumPy implementation of the per-pair kernel (fallback backend)."""

import numpy as np


def _pixel(t, n):
    off = (t < 0.0) | (t >= n)
    k = np.floor(np.clip(t, 0.0, n - 1)).astype(np.int64)
    return k, off


def direct_counts(z, v, mean, factor, cos_a, cos_b, half_width_px,
                  alpha1, beta1, alpha2, beta2, accidental, use):
    rows, cols = cos_a.shape
    w = (1.0 - accidental) / 4.0
    rr = accidental / 4.0
    pos = []
    for r in range(4):
        acc = mean[r] + factor[r, 0] * z[:, 0]
        acc = acc + factor[r, 1] * z[:, 1]
        acc = acc + factor[r, 2] * z[:, 2]
        acc = acc + factor[r, 3] * z[:, 3]
        pos.append(acc)
    r1, o0 = _pixel(pos[0] * half_width_px + rows / 2.0, rows)
    k1, o1 = _pixel(pos[1] * half_width_px + cols / 2.0, cols)
    r2, o2 = _pixel(pos[2] * half_width_px + rows / 2.0, rows)
    k2, o3 = _pixel(pos[3] * half_width_px + cols / 2.0, cols)
    clip = np.zeros(len(v), dtype=bool)
    for flag, off in zip(use, (o0, o1, o2, o3)):
        if flag:
            clip |= off
    u1 = alpha1 + beta1 * cos_a[r1, k1]
    u2 = alpha2 + beta2 * cos_b[r2, k2]
    p0 = w * (1.0 + u1) * (1.0 + u2) + rr
    c1 = p0 + (w * (1.0 + u1) * (1.0 - u2) + rr)
    c2 = c1 + (w * (1.0 - u1) * (1.0 + u2) + rr)
    outcome = (v >= p0).astype(np.int64) + (v >= c1) + (v >= c2)
    counts = np.bincount(outcome, minlength=4)
    return tuple(int(c) for c in counts), int(clip.sum())
