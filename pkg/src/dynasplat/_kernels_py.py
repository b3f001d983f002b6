"""Pure-numpy splatting kernels: a Python loop over splats, vectorized over
each splat's pixel footprint. Reference implementation for the compiled
extension; selected automatically when the extension is not built.

Both kernels expect splat arrays already depth-sorted front to back and
bounding boxes clipped to the image. `conic` packs the inverse 2D covariance
as (a, b, c) with quadratic form a*dx^2 + 2*b*dx*dy + c*dy^2.
"""
import numpy as np

BACKEND_NAME = "python"


def blend_forward(mu2d, conic, alpha, color, depth, bbox, height, width,
                  alpha_clamp, alpha_skip, stop_transmittance):
    """Front-to-back composite.

    Returns (image, dsum, trans, last_contrib): the pre-background color sum,
    the opacity-weighted depth sum, the final per-pixel transmittance, and the
    depth-order index of the last contributing splat (-1 where none). A pixel
    stops accumulating once its transmittance drops below stop_transmittance;
    contributions with effective alpha below alpha_skip are skipped.
    """
    m = mu2d.shape[0]
    image = np.zeros((height, width, 3))
    dsum = np.zeros((height, width))
    trans = np.ones((height, width))
    last = np.full((height, width), -1, dtype=np.int64)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    for i in range(m):
        x0, x1, y0, y1 = bbox[i]
        dx = xs[x0 : x1 + 1][None, :] - mu2d[i, 0]
        dy = ys[y0 : y1 + 1][:, None] - mu2d[i, 1]
        q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
        a = np.minimum(alpha[i] * np.exp(-0.5 * q), alpha_clamp)
        t = trans[y0 : y1 + 1, x0 : x1 + 1]
        act = (t >= stop_transmittance) & (a >= alpha_skip)
        w = np.where(act, a * t, 0.0)
        image[y0 : y1 + 1, x0 : x1 + 1] += w[:, :, None] * color[i]
        dsum[y0 : y1 + 1, x0 : x1 + 1] += w * depth[i]
        trans[y0 : y1 + 1, x0 : x1 + 1] = np.where(act, t * (1.0 - a), t)
        last[y0 : y1 + 1, x0 : x1 + 1] = np.where(act, i, last[y0 : y1 + 1, x0 : x1 + 1])
    return image, dsum, trans, last


def blend_backward(mu2d, conic, alpha, color, depth, bbox, height, width,
                   trans_final, last_contrib, grad_color, grad_dsum, coef_t,
                   alpha_clamp, alpha_skip):
    """Back-to-front sweep producing per-splat gradients.

    trans_final/last_contrib must come from blend_forward on identical inputs;
    the pre-contribution transmittance of each splat is reconstructed by
    dividing, which is bounded because alpha is clamped at alpha_clamp < 1.
    grad_color is dL/d(pre-background image), grad_dsum is dL/d(depth sum),
    and coef_t carries the per-pixel dL/dT_final coefficient (background and
    accumulated-alpha terms).

    Returns (g_mu2d, g_conic, g_alpha, g_color, g_depth).
    """
    m = mu2d.shape[0]
    g_mu2d = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_alpha = np.zeros(m)
    g_color = np.zeros((m, 3))
    g_depth = np.zeros(m)
    t_cur = trans_final.copy()
    suffix_c = np.zeros((height, width, 3))
    suffix_z = np.zeros((height, width))
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    for i in range(m - 1, -1, -1):
        x0, x1, y0, y1 = bbox[i]
        rows = slice(y0, y1 + 1)
        cols = slice(x0, x1 + 1)
        dx = xs[cols][None, :] - mu2d[i, 0]
        dy = ys[rows][:, None] - mu2d[i, 1]
        q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
        g = np.exp(-0.5 * q)
        raw = alpha[i] * g
        clamped = raw > alpha_clamp
        a = np.where(clamped, alpha_clamp, raw)
        act = (last_contrib[rows, cols] >= i) & (a >= alpha_skip)
        one_minus = 1.0 - a
        t_i = np.where(act, t_cur[rows, cols] / one_minus, t_cur[rows, cols])
        w = np.where(act, a * t_i, 0.0)

        gc = grad_color[rows, cols]
        gd = grad_dsum[rows, cols]
        glda = (
            np.sum(gc * (t_i[:, :, None] * color[i] - suffix_c[rows, cols] / one_minus[:, :, None]), axis=2)
            + gd * (t_i * depth[i] - suffix_z[rows, cols] / one_minus)
            + coef_t[rows, cols] / one_minus
        )
        glda = np.where(act, glda, 0.0)

        g_color[i] = np.sum(w[:, :, None] * gc, axis=(0, 1))
        g_depth[i] = np.sum(gd * w)
        gate = act & ~clamped
        g_alpha[i] = np.sum(np.where(gate, glda * g, 0.0))
        gq = np.where(gate, -0.5 * g * glda * alpha[i], 0.0)
        g_conic[i, 0] = np.sum(gq * dx * dx)
        g_conic[i, 1] = np.sum(2.0 * gq * dx * dy)
        g_conic[i, 2] = np.sum(gq * dy * dy)
        g_mu2d[i, 0] = np.sum(gq * (-2.0) * (conic[i, 0] * dx + conic[i, 1] * dy))
        g_mu2d[i, 1] = np.sum(gq * (-2.0) * (conic[i, 2] * dy + conic[i, 1] * dx))

        suffix_c[rows, cols] += w[:, :, None] * color[i]
        suffix_z[rows, cols] += w * depth[i]
        t_cur[rows, cols] = np.where(act, t_i, t_cur[rows, cols])
    return g_mu2d, g_conic, g_alpha, g_color, g_depth
