# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pair Monte Carlo kernel.

Mirrors ``_kernels_py.direct_counts`` operation for operation, so both
backends return identical counts for identical random inputs.
"""

from libc.math cimport floor


cdef inline long _pixel(double t, long n, int *off) noexcept nogil:
    cdef long k
    if t < 0.0:
        off[0] = 1
        return 0
    if t >= n:
        off[0] = 1
        return n - 1
    k = <long>floor(t)
    if k > n - 1:
        k = n - 1
    return k


def direct_counts(const double[:, ::1] z, const double[::1] v, const double[::1] mean,
                  const double[:, ::1] factor, const double[:, ::1] cos_a,
                  const double[:, ::1] cos_b, double half_width_px,
                  double alpha1, double beta1, double alpha2, double beta2,
                  double accidental, use):
    """Counts per outcome (++, +-, -+, --) and the number of clipped pairs."""
    cdef Py_ssize_t n = z.shape[0], i
    cdef long rows = cos_a.shape[0], cols = cos_a.shape[1]
    cdef double half_rows = rows / 2.0, half_cols = cols / 2.0
    cdef double w = (1.0 - accidental) / 4.0, rr = accidental / 4.0
    cdef double pos[4]
    cdef double z0, z1, z2, z3, acc, u1, u2, p0, c1, c2, vi
    cdef long r1, k1, r2, k2
    cdef int off_r1, off_k1, off_r2, off_k2, clip
    cdef int use0 = use[0], use1 = use[1], use2 = use[2], use3 = use[3]
    cdef long n0 = 0, n1 = 0, n2 = 0, n3 = 0, nclip = 0
    cdef int r
    with nogil:
        for i in range(n):
            z0 = z[i, 0]
            z1 = z[i, 1]
            z2 = z[i, 2]
            z3 = z[i, 3]
            for r in range(4):
                acc = mean[r]
                acc = acc + factor[r, 0] * z0
                acc = acc + factor[r, 1] * z1
                acc = acc + factor[r, 2] * z2
                acc = acc + factor[r, 3] * z3
                pos[r] = acc
            off_r1 = 0
            off_k1 = 0
            off_r2 = 0
            off_k2 = 0
            r1 = _pixel(pos[0] * half_width_px + half_rows, rows, &off_r1)
            k1 = _pixel(pos[1] * half_width_px + half_cols, cols, &off_k1)
            r2 = _pixel(pos[2] * half_width_px + half_rows, rows, &off_r2)
            k2 = _pixel(pos[3] * half_width_px + half_cols, cols, &off_k2)
            clip = (use0 and off_r1) or (use1 and off_k1) or (use2 and off_r2) or (use3 and off_k2)
            if clip:
                nclip += 1
            u1 = alpha1 + beta1 * cos_a[r1, k1]
            u2 = alpha2 + beta2 * cos_b[r2, k2]
            p0 = w * (1.0 + u1) * (1.0 + u2) + rr
            c1 = p0 + (w * (1.0 + u1) * (1.0 - u2) + rr)
            c2 = c1 + (w * (1.0 - u1) * (1.0 + u2) + rr)
            vi = v[i]
            if vi < p0:
                n0 += 1
            elif vi < c1:
                n1 += 1
            elif vi < c2:
                n2 += 1
            else:
                n3 += 1
    return (n0, n1, n2, n3), nclip
