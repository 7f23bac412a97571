"""Raw numpy kernels for 3-D convolution and transposed convolution.

Layout conventions (no batch axis; the pipeline trains one window at a
time):

* conv3d input  (Cin, X, Y, Z), weight (Cout, Cin, k, k, k)
* conv_transpose3d input (Cin, X, Y, Z), weight (Cin, Cout, k, k, k)

Both directions are expressed through im2col / col2im. Column matrices
are built in slabs along the slowest output axis so peak extra memory
stays bounded regardless of volume size. Scatter (col2im) is a loop over
the k**3 kernel offsets with strided slice-adds, which is deterministic
and avoids fancy indexing entirely.

conv_transpose3d with the same weight array (viewed as (Cin, Cout, ...)
= conv's (Cout, Cin, ...)) is the exact adjoint of conv3d.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# soft cap on the column-matrix size per slab
_COL_BUDGET_BYTES = 192 * 1024 * 1024


def _out_dim(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _check_conv_args(shape, k, stride, pad):
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if pad < 0:
        raise ValueError(f"padding must be nonnegative, got {pad}")
    for n in shape:
        if n + 2 * pad < k:
            raise ValueError(
                f"kernel {k} larger than padded input extent {n + 2 * pad}"
            )


def _pad3(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))


def _slab_len(cin, k, ox, oy, oz):
    per_slice = cin * k * k * k * ox * oy * 4
    return max(1, min(oz, _COL_BUDGET_BYTES // max(per_slice, 1)))


def _im2col_slab(xp, k, stride, ox, oy, z0, z1):
    """Columns for output z-slab [z0, z1): (Cin*k^3, ox*oy*(z1-z0))."""
    win = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    sub = win[:, ::stride, ::stride, z0 * stride : (z1 - 1) * stride + 1 : stride]
    # (C, ox, oy, zc, k, k, k) -> (C, k, k, k, ox, oy, zc)
    sub = sub.transpose(0, 4, 5, 6, 1, 2, 3)
    c = xp.shape[0]
    return np.ascontiguousarray(sub).reshape(c * k * k * k, ox * oy * (z1 - z0))


def _scatter_slab(buf, col6, stride, z0):
    """Add col6 (C, k, k, k, ox, oy, zc) into ``buf`` at stride offsets."""
    _, k, _, _, ox, oy, zc = col6.shape
    for dx in range(k):
        sx = slice(dx, dx + (ox - 1) * stride + 1, stride)
        for dy in range(k):
            sy = slice(dy, dy + (oy - 1) * stride + 1, stride)
            for dz in range(k):
                z_start = z0 * stride + dz
                sz = slice(z_start, z_start + (zc - 1) * stride + 1, stride)
                buf[:, sx, sy, sz] += col6[:, dx, dy, dz]


def conv3d_forward(x, w, stride, pad):
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    if x.shape[0] != cin:
        raise ValueError(f"conv3d expects {cin} input channels, got {x.shape[0]}")
    _check_conv_args(x.shape[1:], k, stride, pad)
    ox, oy, oz = (_out_dim(n, k, stride, pad) for n in x.shape[1:])
    xp = _pad3(x, pad)
    wm = w.reshape(cout, cin * k * k * k)
    y = np.empty((cout, ox, oy, oz), dtype=np.float32)
    step = _slab_len(cin, k, ox, oy, oz)
    for z0 in range(0, oz, step):
        z1 = min(z0 + step, oz)
        col = _im2col_slab(xp, k, stride, ox, oy, z0, z1)
        y[:, :, :, z0:z1] = (wm @ col).reshape(cout, ox, oy, z1 - z0)
    return y


def conv3d_backward(x, w, g, stride, pad):
    """Gradients (gx, gw) of conv3d given upstream gradient ``g``."""
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    ox, oy, oz = g.shape[1:]
    xp = _pad3(x, pad)
    wm = w.reshape(cout, cin * k * k * k)
    gw = np.zeros_like(wm)
    gxp = np.zeros_like(xp)
    step = _slab_len(cin, k, ox, oy, oz)
    for z0 in range(0, oz, step):
        z1 = min(z0 + step, oz)
        gz = g[:, :, :, z0:z1].reshape(cout, -1)
        col = _im2col_slab(xp, k, stride, ox, oy, z0, z1)
        gw += gz @ col.T
        gcol = (wm.T @ gz).reshape(cin, k, k, k, ox, oy, z1 - z0)
        _scatter_slab(gxp, gcol, stride, z0)
    if pad:
        gx = gxp[:, pad:-pad, pad:-pad, pad:-pad]
    else:
        gx = gxp
    return np.ascontiguousarray(gx), gw.reshape(w.shape)


def convt3d_forward(x, w, stride, pad):
    cin, cout, k = w.shape[0], w.shape[1], w.shape[2]
    if x.shape[0] != cin:
        raise ValueError(f"conv_transpose3d expects {cin} input channels, got {x.shape[0]}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    ox, oy, oz = ((n - 1) * stride + k - 2 * pad for n in x.shape[1:])
    if min(ox, oy, oz) < 1:
        raise ValueError("transposed conv output would be empty; padding too large")
    ix, iy, iz = x.shape[1:]
    wm = w.reshape(cin, cout * k * k * k)
    yp = np.zeros((cout, ox + 2 * pad, oy + 2 * pad, oz + 2 * pad), dtype=np.float32)
    step = _slab_len(cout, k, ix, iy, iz)
    for z0 in range(0, iz, step):
        z1 = min(z0 + step, iz)
        xz = x[:, :, :, z0:z1].reshape(cin, -1)
        col = (wm.T @ xz).reshape(cout, k, k, k, ix, iy, z1 - z0)
        _scatter_slab(yp, col, stride, z0)
    if pad:
        return np.ascontiguousarray(yp[:, pad:-pad, pad:-pad, pad:-pad])
    return yp


def convt3d_backward(x, w, g, stride, pad):
    """Gradients (gx, gw) of conv_transpose3d given upstream gradient ``g``."""
    cin, cout, k = w.shape[0], w.shape[1], w.shape[2]
    ix, iy, iz = x.shape[1:]
    gp = _pad3(g, pad)
    wm = w.reshape(cin, cout * k * k * k)
    gx = np.empty_like(x)
    gw = np.zeros_like(wm)
    step = _slab_len(cout, k, ix, iy, iz)
    for z0 in range(0, iz, step):
        z1 = min(z0 + step, iz)
        gcol = _im2col_slab(gp, k, stride, ix, iy, z0, z1)
        gx[:, :, :, z0:z1] = (wm @ gcol).reshape(cin, ix, iy, z1 - z0)
        gw += x[:, :, :, z0:z1].reshape(cin, -1) @ gcol.T
    return gx, gw.reshape(w.shape)
