"""Compiled inner loops for projection and network training.

All kernels are sequential and allocation-free, so results are reproducible
bit-for-bit run to run.  The projector pair (`fwd_view` / `bwd_view`) uses
one shared sampling rule: a ray at angle theta with detector offset s is
sampled at positions ``s*u + t_k*v`` (u = (cos, sin), v = (-sin, cos)) on
the symmetric grid ``t_k = (k - half) * step``, each sample contributing
its bilinear interpolation weights times the step length.  Backprojection
scatters exactly the weights the forward pass gathers, which makes the two
kernels exact matrix transposes of one another.  The symmetric t-grid also
makes opposed rays sample identical physical points, so conjugate views of
a noiseless projection agree to rounding error.
"""

from __future__ import annotations

import math

from numba import njit


@njit(cache=True, inline="always")
def _ray_t_window(px, py, dirx, diry, bound, step, half):
    """Sample-index range [k_lo, k_hi] that can intersect the image square.

    Conservative by one sample on each side; samples outside the square
    have zero weight anyway, this only skips provably-zero work.
    """
    t_lo = -1.0e300
    t_hi = 1.0e300
    if abs(dirx) > 1e-300:
        a = (-bound - px) / dirx
        b = (bound - px) / dirx
        if a > b:
            a, b = b, a
        t_lo = max(t_lo, a)
        t_hi = min(t_hi, b)
    elif abs(px) >= bound:
        return 1, 0
    if abs(diry) > 1e-300:
        a = (-bound - py) / diry
        b = (bound - py) / diry
        if a > b:
            a, b = b, a
        t_lo = max(t_lo, a)
        t_hi = min(t_hi, b)
    elif abs(py) >= bound:
        return 1, 0
    if t_lo > t_hi:
        return 1, 0
    k_lo = int(math.ceil(t_lo / step)) + half - 1
    k_hi = int(math.floor(t_hi / step)) + half + 1
    if k_lo < 0:
        k_lo = 0
    if k_hi > 2 * half:
        k_hi = 2 * half
    return k_lo, k_hi


@njit(cache=True, fastmath=True)
def fwd_view(img, cos_t, sin_t, offsets, step, half, pixel_spacing, out_row):
    """Line integrals for one view; writes one sinogram row."""
    n = img.shape[0]
    ctr = (n - 1) * 0.5
    inv_dx = 1.0 / pixel_spacing
    bound = (n + 1) * 0.5 * pixel_spacing
    dirx = -sin_t
    diry = cos_t
    for d in range(offsets.shape[0]):
        s = offsets[d]
        px = s * cos_t
        py = s * sin_t
        k_lo, k_hi = _ray_t_window(px, py, dirx, diry, bound, step, half)
        acc = 0.0
        for k in range(k_lo, k_hi + 1):
            t = (k - half) * step
            x = px + t * dirx
            y = py + t * diry
            c = x * inv_dx + ctr
            r = ctr - y * inv_dx
            if c <= -1.0 or c >= n or r <= -1.0 or r >= n:
                continue
            c0 = int(math.floor(c))
            r0 = int(math.floor(r))
            fc = c - c0
            fr = r - r0
            if 0 <= r0 < n:
                if 0 <= c0 < n:
                    acc += (1.0 - fr) * (1.0 - fc) * img[r0, c0]
                if 0 <= c0 + 1 < n:
                    acc += (1.0 - fr) * fc * img[r0, c0 + 1]
            if 0 <= r0 + 1 < n:
                if 0 <= c0 < n:
                    acc += fr * (1.0 - fc) * img[r0 + 1, c0]
                if 0 <= c0 + 1 < n:
                    acc += fr * fc * img[r0 + 1, c0 + 1]
        out_row[d] = acc * step


@njit(cache=True, fastmath=True)
def bwd_view(values, cos_t, sin_t, offsets, step, half, pixel_spacing, img_acc):
    """Adjoint of :func:`fwd_view`: scatter one weighted row into img_acc."""
    n = img_acc.shape[0]
    ctr = (n - 1) * 0.5
    inv_dx = 1.0 / pixel_spacing
    bound = (n + 1) * 0.5 * pixel_spacing
    dirx = -sin_t
    diry = cos_t
    for d in range(offsets.shape[0]):
        val = values[d] * step
        if val == 0.0:
            continue
        s = offsets[d]
        px = s * cos_t
        py = s * sin_t
        k_lo, k_hi = _ray_t_window(px, py, dirx, diry, bound, step, half)
        for k in range(k_lo, k_hi + 1):
            t = (k - half) * step
            x = px + t * dirx
            y = py + t * diry
            c = x * inv_dx + ctr
            r = ctr - y * inv_dx
            if c <= -1.0 or c >= n or r <= -1.0 or r >= n:
                continue
            c0 = int(math.floor(c))
            r0 = int(math.floor(r))
            fc = c - c0
            fr = r - r0
            if 0 <= r0 < n:
                if 0 <= c0 < n:
                    img_acc[r0, c0] += (1.0 - fr) * (1.0 - fc) * val
                if 0 <= c0 + 1 < n:
                    img_acc[r0, c0 + 1] += (1.0 - fr) * fc * val
            if 0 <= r0 + 1 < n:
                if 0 <= c0 < n:
                    img_acc[r0 + 1, c0] += fr * (1.0 - fc) * val
                if 0 <= c0 + 1 < n:
                    img_acc[r0 + 1, c0 + 1] += fr * fc * val


@njit(cache=True, fastmath=True)
def sart_view_update_cached(x, cos_t, sin_t, offsets, p_row, ray_norm, step, half, pixel_spacing, lam, eps, num, den, work_row):
    """One SART view update with the view's pixel column sums precomputed.

    Identical update rule to :func:`sart_view_update` but reads the
    per-pixel normalizer from ``den`` (computed once per geometry) instead
    of rebuilding it, which removes one scatter pass per view.
    """
    n = x.shape[0]
    n_det = offsets.shape[0]
    ctr = (n - 1) * 0.5
    inv_dx = 1.0 / pixel_spacing
    bound = (n + 1) * 0.5 * pixel_spacing
    dirx = -sin_t
    diry = cos_t
    fwd_view(x, cos_t, sin_t, offsets, step, half, pixel_spacing, work_row)
    for d in range(n_det):
        if ray_norm[d] > eps:
            work_row[d] = (p_row[d] - work_row[d]) / ray_norm[d]
        else:
            work_row[d] = 0.0
    for i in range(n):
        for j in range(n):
            num[i, j] = 0.0
    for d in range(n_det):
        val = work_row[d] * step
        if val == 0.0:
            continue
        s = offsets[d]
        px = s * cos_t
        py = s * sin_t
        k_lo, k_hi = _ray_t_window(px, py, dirx, diry, bound, step, half)
        for k in range(k_lo, k_hi + 1):
            t = (k - half) * step
            xx = px + t * dirx
            yy = py + t * diry
            c = xx * inv_dx + ctr
            r = ctr - yy * inv_dx
            if c <= -1.0 or c >= n or r <= -1.0 or r >= n:
                continue
            c0 = int(math.floor(c))
            r0 = int(math.floor(r))
            fc = c - c0
            fr = r - r0
            if 0 <= r0 < n:
                if 0 <= c0 < n:
                    num[r0, c0] += (1.0 - fr) * (1.0 - fc) * val
                if 0 <= c0 + 1 < n:
                    num[r0, c0 + 1] += (1.0 - fr) * fc * val
            if 0 <= r0 + 1 < n:
                if 0 <= c0 < n:
                    num[r0 + 1, c0] += fr * (1.0 - fc) * val
                if 0 <= c0 + 1 < n:
                    num[r0 + 1, c0 + 1] += fr * fc * val
    for i in range(n):
        for j in range(n):
            if den[i, j] > eps:
                x[i, j] += lam * num[i, j] / den[i, j]


@njit(cache=True, fastmath=True)
def sart_view_update(x, cos_t, sin_t, offsets, p_row, ray_norm, step, half, pixel_spacing, lam, eps, num, den, work_row):
    """One SART view update, fused: forward, normalized residual, scatter
    of residual and of ones (column sums), then the guarded image update.
    """
    n = x.shape[0]
    n_det = offsets.shape[0]
    ctr = (n - 1) * 0.5
    inv_dx = 1.0 / pixel_spacing
    bound = (n + 1) * 0.5 * pixel_spacing
    dirx = -sin_t
    diry = cos_t
    fwd_view(x, cos_t, sin_t, offsets, step, half, pixel_spacing, work_row)
    for d in range(n_det):
        if ray_norm[d] > eps:
            work_row[d] = (p_row[d] - work_row[d]) / ray_norm[d]
        else:
            work_row[d] = 0.0
    for i in range(n):
        for j in range(n):
            num[i, j] = 0.0
            den[i, j] = 0.0
    for d in range(n_det):
        val = work_row[d] * step
        s = offsets[d]
        px = s * cos_t
        py = s * sin_t
        k_lo, k_hi = _ray_t_window(px, py, dirx, diry, bound, step, half)
        for k in range(k_lo, k_hi + 1):
            t = (k - half) * step
            xx = px + t * dirx
            yy = py + t * diry
            c = xx * inv_dx + ctr
            r = ctr - yy * inv_dx
            if c <= -1.0 or c >= n or r <= -1.0 or r >= n:
                continue
            c0 = int(math.floor(c))
            r0 = int(math.floor(r))
            fc = c - c0
            fr = r - r0
            if 0 <= r0 < n:
                if 0 <= c0 < n:
                    w = (1.0 - fr) * (1.0 - fc)
                    num[r0, c0] += w * val
                    den[r0, c0] += w * step
                if 0 <= c0 + 1 < n:
                    w = (1.0 - fr) * fc
                    num[r0, c0 + 1] += w * val
                    den[r0, c0 + 1] += w * step
            if 0 <= r0 + 1 < n:
                if 0 <= c0 < n:
                    w = fr * (1.0 - fc)
                    num[r0 + 1, c0] += w * val
                    den[r0 + 1, c0] += w * step
                if 0 <= c0 + 1 < n:
                    w = fr * fc
                    num[r0 + 1, c0 + 1] += w * val
                    den[r0 + 1, c0 + 1] += w * step
    for i in range(n):
        for j in range(n):
            if den[i, j] > eps:
                x[i, j] += lam * num[i, j] / den[i, j]


# ---------------------------------------------------------------------------
# Convolution kernels for the denoising network
# ---------------------------------------------------------------------------


@njit(cache=True, fastmath=True)
def conv3x3(xpad, w, b, slope, apply_act, outpad):
    """3x3 convolution between zero-padded planes, optional leaky activation.

    xpad: (Cin, H+2, W+2); w: (Cout, Cin, 3, 3); outpad: (Cout, H+2, W+2).
    Only the interior of outpad is written; its border must already be
    zero (it serves as the padding of the next layer).
    """
    c_out = w.shape[0]
    c_in = w.shape[1]
    hh = outpad.shape[1] - 2
    ww = outpad.shape[2] - 2
    for co in range(c_out):
        for i in range(hh):
            row = outpad[co, i + 1]
            bias = b[co]
            for j in range(ww):
                row[j + 1] = bias
            for ci in range(c_in):
                for ky in range(3):
                    src = xpad[ci, i + ky]
                    w0 = w[co, ci, ky, 0]
                    w1 = w[co, ci, ky, 1]
                    w2 = w[co, ci, ky, 2]
                    for j in range(ww):
                        row[j + 1] += w0 * src[j] + w1 * src[j + 1] + w2 * src[j + 2]
        if apply_act:
            for i in range(hh):
                row = outpad[co, i + 1]
                for j in range(ww):
                    v = row[j + 1]
                    if v < 0:
                        row[j + 1] = slope * v
    return outpad


@njit(cache=True, fastmath=True)
def conv3x3_grad_w(xpad, doutpad, dw, db):
    """Weight and bias gradients of a 3x3 convolution (overwrites dw, db)."""
    c_out = doutpad.shape[0]
    c_in = xpad.shape[0]
    hh = doutpad.shape[1] - 2
    ww = doutpad.shape[2] - 2
    for co in range(c_out):
        s = 0.0
        for i in range(hh):
            drow = doutpad[co, i + 1]
            for j in range(ww):
                s += drow[j + 1]
        db[co] = s
        for ci in range(c_in):
            for ky in range(3):
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                for i in range(hh):
                    drow = doutpad[co, i + 1]
                    src = xpad[ci, i + ky]
                    for j in range(ww):
                        d = drow[j + 1]
                        s0 += d * src[j]
                        s1 += d * src[j + 1]
                        s2 += d * src[j + 2]
                dw[co, ci, ky, 0] = s0
                dw[co, ci, ky, 1] = s1
                dw[co, ci, ky, 2] = s2


@njit(cache=True, fastmath=True)
def conv1x1(xpad, w, b, out):
    """1x1 convolution collapsing C padded planes to one plane (unpadded)."""
    c_in = xpad.shape[0]
    hh = out.shape[0]
    ww = out.shape[1]
    for i in range(hh):
        row = out[i]
        for j in range(ww):
            row[j] = b
        for ci in range(c_in):
            src = xpad[ci, i + 1]
            wc = w[ci]
            for j in range(ww):
                row[j] += wc * src[j + 1]


@njit(cache=True, fastmath=True)
def conv1x1_bwd(xpad, w, dout, slope, dw, dxpad):
    """Gradients of :func:`conv1x1`; returns db.

    Writes the input gradient into a padded plane with the leaky-rectifier
    chain rule already applied (xpad holds the rectifier *outputs*, whose
    sign matches its inputs), so dxpad is directly the pre-activation
    gradient of the preceding convolution.
    """
    c_in = xpad.shape[0]
    hh = dout.shape[0]
    ww = dout.shape[1]
    db = 0.0
    for i in range(hh):
        drow = dout[i]
        for j in range(ww):
            db += drow[j]
    for ci in range(c_in):
        s = 0.0
        wc = w[ci]
        for i in range(hh):
            drow = dout[i]
            src = xpad[ci, i + 1]
            dst = dxpad[ci, i + 1]
            for j in range(ww):
                d = drow[j]
                a = src[j + 1]
                s += d * a
                g = wc * d
                if a <= 0:
                    g = slope * g
                dst[j + 1] = g
        dw[ci] = s
    return db


@njit(cache=True, fastmath=True)
def conv3x3_bwd_input(dpad, w_t, actpad, slope, dxpad):
    """Input gradient of a 3x3 convolution followed by a leaky rectifier.

    Gathers dpad with the channel-transposed, spatially flipped kernels
    w_t and applies the rectifier chain rule from actpad's signs in the
    same pass.  Writes the interior of dxpad (borders must stay zero).
    """
    c_out = w_t.shape[0]
    c_in = w_t.shape[1]
    hh = dxpad.shape[1] - 2
    ww = dxpad.shape[2] - 2
    for co in range(c_out):
        for i in range(hh):
            row = dxpad[co, i + 1]
            for j in range(ww):
                row[j + 1] = 0.0
            for ci in range(c_in):
                for ky in range(3):
                    src = dpad[ci, i + ky]
                    w0 = w_t[co, ci, ky, 0]
                    w1 = w_t[co, ci, ky, 1]
                    w2 = w_t[co, ci, ky, 2]
                    for j in range(ww):
                        row[j + 1] += w0 * src[j] + w1 * src[j + 1] + w2 * src[j + 2]
        for i in range(hh):
            arow = actpad[co, i + 1]
            row = dxpad[co, i + 1]
            for j in range(ww):
                if arow[j + 1] <= 0:
                    row[j + 1] = slope * row[j + 1]


@njit(cache=True, fastmath=True)
def pair_loss_grad(sa, sb, fa, fb, alpha, ga, gb):
    """Symmetric cross-prediction loss with a consistency term.

    With denoised values D_A = sa - fa and D_B = sb - fb:

        loss = 0.5*mean((D_A - sb)^2) + 0.5*mean((D_B - sa)^2)
             + alpha*mean((D_A - D_B)^2)

    Writes d(loss)/d(fa) and d(loss)/d(fb) and returns the loss, with all
    sums accumulated in double precision.
    """
    hh = sa.shape[0]
    ww = sa.shape[1]
    inv_n = 1.0 / (hh * ww)
    loss = 0.0
    for i in range(hh):
        for j in range(ww):
            da = sa[i, j] - fa[i, j]
            db = sb[i, j] - fb[i, j]
            ra = da - sb[i, j]
            rb = db - sa[i, j]
            rc = da - db
            loss += 0.5 * ra * ra + 0.5 * rb * rb + alpha * (rc * rc)
            ga[i, j] = -(ra + 2.0 * alpha * rc) * inv_n
            gb[i, j] = -(rb - 2.0 * alpha * rc) * inv_n
    return loss * inv_n
