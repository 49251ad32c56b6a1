# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: z-buffered point splatting and the joint bilateral sum."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, isinf

cnp.import_array()


def splat_nearest(const cnp.int64_t[::1] u, const cnp.int64_t[::1] v,
                  const double[::1] z, Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t k, x, y
    zbuf_arr = np.zeros((height, width), dtype=np.float64)
    index_arr = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef cnp.int64_t[:, ::1] index = index_arr
    with nogil:
        for k in range(n):
            x = u[k]
            y = v[k]
            if x < 0 or y < 0 or x >= width or y >= height:
                continue
            # strict comparison keeps the earliest source on equal depth
            if index[y, x] < 0 or z[k] < zbuf[y, x]:
                zbuf[y, x] = z[k]
                index[y, x] = k
    return zbuf_arr, index_arr


def joint_bilateral(const double[:, ::1] values, const cnp.uint8_t[:, ::1] valid,
                    const double[:, ::1] guide, const cnp.uint8_t[:, ::1] guide_valid,
                    double sigma_space, double sigma_range, Py_ssize_t radius):
    cdef Py_ssize_t h = values.shape[0], w = values.shape[1]
    cdef Py_ssize_t y, x, dy, dx, yy, xx, side = 2 * radius + 1
    cdef double num, den, wgt, diff, g0
    cdef double inv_2sr2 = 0.0
    cdef bint use_range = not isinf(sigma_range)
    if use_range:
        inv_2sr2 = 1.0 / (2.0 * sigma_range * sigma_range)
    spatial_arr = np.empty((side, side), dtype=np.float64)
    cdef double[:, ::1] spatial = spatial_arr
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            spatial[dy + radius, dx + radius] = exp(
                -(dx * dx + dy * dy) / (2.0 * sigma_space * sigma_space))
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for y in range(h):
            for x in range(w):
                if not guide_valid[y, x]:
                    continue
                g0 = guide[y, x]
                num = 0.0
                den = 0.0
                for dy in range(-radius, radius + 1):
                    yy = y + dy
                    if yy < 0 or yy >= h:
                        continue
                    for dx in range(-radius, radius + 1):
                        xx = x + dx
                        if xx < 0 or xx >= w:
                            continue
                        if not valid[yy, xx] or not guide_valid[yy, xx]:
                            continue
                        wgt = spatial[dy + radius, dx + radius]
                        if use_range:
                            diff = guide[yy, xx] - g0
                            wgt = wgt * exp(-diff * diff * inv_2sr2)
                        num += wgt * values[yy, xx]
                        den += wgt
                if den >= 1e-12:
                    out[y, x] = num / den
    return out_arr
