"""Independent reference implementations used as test oracles.

Deliberately naive: nested loops and direct formula transcriptions, kept free
of any code shared with the package's optimized paths.
"""

from __future__ import annotations

import numpy as np


def naive_conv2d(x: np.ndarray, w: np.ndarray, stride=(1, 1), padding=(0, 0),
                 bias=None) -> np.ndarray:
    """Six-nested-loop cross-correlation on a single [C, H, W] input."""
    c, h, wd = x.shape
    k, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    padded = np.zeros((c, h + 2 * ph, wd + 2 * pw))
    padded[:, ph:ph + h, pw:pw + wd] = x
    out = np.zeros((k, oh, ow))
    for kk in range(k):
        for oi in range(oh):
            for oj in range(ow):
                acc = 0.0
                for cc in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[kk, cc, di, dj] * padded[cc, oi * sh + di, oj * sw + dj]
                out[kk, oi, oj] = acc
        if bias is not None:
            out[kk] += bias[kk]
    return out


def naive_deconv2d(x: np.ndarray, w: np.ndarray, stride=(1, 1), padding=(0, 0),
                   bias=None) -> np.ndarray:
    """Scatter-add transposed convolution on a single [C_in, H, W] input."""
    cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    oh = (h - 1) * sh - 2 * ph + kh
    ow = (wd - 1) * sw - 2 * pw + kw
    full = np.zeros((cout, oh + 2 * ph, ow + 2 * pw))
    for ci in range(cin):
        for i in range(h):
            for j in range(wd):
                for co in range(cout):
                    for di in range(kh):
                        for dj in range(kw):
                            full[co, i * sh + di, j * sw + dj] += x[ci, i, j] * w[ci, co, di, dj]
    out = full[:, ph:ph + oh, pw:pw + ow]
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def mtrnn_reference_loss(weights: np.ndarray, tau: np.ndarray, io_count: int,
                         cs0: np.ndarray, targets: np.ndarray, alpha: float,
                         channel_mask: np.ndarray) -> float:
    """Scripted transcription of the unrolled dynamics and summed error.

    Written independently of the package: explicit python loops, one neuron
    vector at a time.
    """
    n = weights.shape[0]
    t_len = targets.shape[0]
    u = np.zeros(n)
    u[n - cs0.size:] = cs0
    y = np.tanh(u)
    loss = 0.0
    for k in range(1, t_len):
        x = np.zeros(n)
        if k == 1:
            x[:io_count] = targets[0]
        else:
            x[:io_count] = alpha * y[:io_count] + (1.0 - alpha) * targets[k - 1]
        x[io_count:] = y[io_count:]
        u_new = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += weights[i, j] * x[j]
            u_new[i] = (1.0 - 1.0 / tau[i]) * u[i] + acc / tau[i]
        u = u_new
        y = np.tanh(u)
        for i in range(io_count):
            if channel_mask[i]:
                loss += (y[i] - targets[k, i]) ** 2
    return loss
