# cython: language_level=3
"""Compiled splatting kernels: scalar per-pixel loops over each splat's
bounding box. Semantics mirror _kernels_py exactly (same gating, same
per-pixel accumulation order); the package selects this module at import
when the extension is built.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

BACKEND_NAME = "compiled"


def blend_forward(double[:, ::1] mu2d, double[:, ::1] conic, double[::1] alpha,
                  double[:, ::1] color, double[::1] depth, cnp.int64_t[:, ::1] bbox,
                  int height, int width, double alpha_clamp, double alpha_skip,
                  double stop_transmittance):
    """Front-to-back composite of depth-sorted splats; see _kernels_py."""
    cdef Py_ssize_t m = mu2d.shape[0]
    image_np = np.zeros((height, width, 3))
    dsum_np = np.zeros((height, width))
    trans_np = np.ones((height, width))
    last_np = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, :, ::1] image = image_np
    cdef double[:, ::1] dsum = dsum_np
    cdef double[:, ::1] trans = trans_np
    cdef cnp.int64_t[:, ::1] last = last_np

    cdef Py_ssize_t i
    cdef cnp.int64_t x, y, x0, x1, y0, y1
    cdef double ca, cb, cc, al, zi, c0, c1, c2, mx, my
    cdef double dx, dy, q, a, t, w
    for i in range(m):
        x0 = bbox[i, 0]; x1 = bbox[i, 1]; y0 = bbox[i, 2]; y1 = bbox[i, 3]
        ca = conic[i, 0]; cb = conic[i, 1]; cc = conic[i, 2]
        al = alpha[i]; zi = depth[i]
        c0 = color[i, 0]; c1 = color[i, 1]; c2 = color[i, 2]
        mx = mu2d[i, 0]; my = mu2d[i, 1]
        for y in range(y0, y1 + 1):
            dy = y - my
            for x in range(x0, x1 + 1):
                t = trans[y, x]
                if t < stop_transmittance:
                    continue
                dx = x - mx
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                a = al * exp(-0.5 * q)
                if a > alpha_clamp:
                    a = alpha_clamp
                if a < alpha_skip:
                    continue
                w = a * t
                image[y, x, 0] += w * c0
                image[y, x, 1] += w * c1
                image[y, x, 2] += w * c2
                dsum[y, x] += w * zi
                trans[y, x] = t * (1.0 - a)
                last[y, x] = i
    return image_np, dsum_np, trans_np, last_np


def blend_backward(double[:, ::1] mu2d, double[:, ::1] conic, double[::1] alpha,
                   double[:, ::1] color, double[::1] depth, cnp.int64_t[:, ::1] bbox,
                   int height, int width, double[:, ::1] trans_final,
                   cnp.int64_t[:, ::1] last_contrib, double[:, :, ::1] grad_color,
                   double[:, ::1] grad_dsum, double[:, ::1] coef_t,
                   double alpha_clamp, double alpha_skip):
    """Back-to-front sweep producing per-splat gradients; see _kernels_py.

    Reconstructs each splat's pre-contribution transmittance by dividing the
    running value by (1 - a); bounded because a is clamped below 1.
    """
    cdef Py_ssize_t m = mu2d.shape[0]
    g_mu2d_np = np.zeros((m, 2))
    g_conic_np = np.zeros((m, 3))
    g_alpha_np = np.zeros(m)
    g_color_np = np.zeros((m, 3))
    g_depth_np = np.zeros(m)
    t_cur_np = np.array(trans_final, copy=True)
    suffix_c_np = np.zeros((height, width, 3))
    suffix_z_np = np.zeros((height, width))
    cdef double[:, ::1] g_mu2d = g_mu2d_np
    cdef double[:, ::1] g_conic = g_conic_np
    cdef double[::1] g_alpha = g_alpha_np
    cdef double[:, ::1] g_color = g_color_np
    cdef double[::1] g_depth = g_depth_np
    cdef double[:, ::1] t_cur = t_cur_np
    cdef double[:, :, ::1] suffix_c = suffix_c_np
    cdef double[:, ::1] suffix_z = suffix_z_np

    cdef Py_ssize_t i
    cdef cnp.int64_t x, y, x0, x1, y0, y1
    cdef double ca, cb, cc, al, zi, c0, c1, c2, mx, my
    cdef double dx, dy, q, g, raw, a, one_minus, t_i, w, glda
    cdef double gc0, gc1, gc2, gd, gq
    cdef double acc_c0, acc_c1, acc_c2, acc_z, acc_a
    cdef double acc_mx, acc_my, acc_ca, acc_cb, acc_cc
    cdef bint clamped
    for i in range(m - 1, -1, -1):
        x0 = bbox[i, 0]; x1 = bbox[i, 1]; y0 = bbox[i, 2]; y1 = bbox[i, 3]
        ca = conic[i, 0]; cb = conic[i, 1]; cc = conic[i, 2]
        al = alpha[i]; zi = depth[i]
        c0 = color[i, 0]; c1 = color[i, 1]; c2 = color[i, 2]
        mx = mu2d[i, 0]; my = mu2d[i, 1]
        acc_c0 = acc_c1 = acc_c2 = acc_z = acc_a = 0.0
        acc_mx = acc_my = acc_ca = acc_cb = acc_cc = 0.0
        for y in range(y0, y1 + 1):
            dy = y - my
            for x in range(x0, x1 + 1):
                if last_contrib[y, x] < i:
                    continue
                dx = x - mx
                q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
                g = exp(-0.5 * q)
                raw = al * g
                clamped = raw > alpha_clamp
                a = alpha_clamp if clamped else raw
                if a < alpha_skip:
                    continue
                one_minus = 1.0 - a
                t_i = t_cur[y, x] / one_minus
                w = a * t_i
                gc0 = grad_color[y, x, 0]
                gc1 = grad_color[y, x, 1]
                gc2 = grad_color[y, x, 2]
                gd = grad_dsum[y, x]
                glda = (gc0 * (t_i * c0 - suffix_c[y, x, 0] / one_minus)
                        + gc1 * (t_i * c1 - suffix_c[y, x, 1] / one_minus)
                        + gc2 * (t_i * c2 - suffix_c[y, x, 2] / one_minus)
                        + gd * (t_i * zi - suffix_z[y, x] / one_minus)
                        + coef_t[y, x] / one_minus)
                acc_c0 += w * gc0
                acc_c1 += w * gc1
                acc_c2 += w * gc2
                acc_z += gd * w
                if not clamped:
                    acc_a += glda * g
                    gq = -0.5 * g * glda * al
                    acc_ca += gq * dx * dx
                    acc_cb += 2.0 * gq * dx * dy
                    acc_cc += gq * dy * dy
                    acc_mx += gq * (-2.0) * (ca * dx + cb * dy)
                    acc_my += gq * (-2.0) * (cc * dy + cb * dx)
                suffix_c[y, x, 0] += w * c0
                suffix_c[y, x, 1] += w * c1
                suffix_c[y, x, 2] += w * c2
                suffix_z[y, x] += w * zi
                t_cur[y, x] = t_i
        g_color[i, 0] = acc_c0
        g_color[i, 1] = acc_c1
        g_color[i, 2] = acc_c2
        g_depth[i] = acc_z
        g_alpha[i] = acc_a
        g_conic[i, 0] = acc_ca
        g_conic[i, 1] = acc_cb
        g_conic[i, 2] = acc_cc
        g_mu2d[i, 0] = acc_mx
        g_mu2d[i, 1] = acc_my
    return g_mu2d_np, g_conic_np, g_alpha_np, g_color_np, g_depth_np
