"""Neural layers with hand-derived gradients: conv, deconv, fully connected.

Conventions:

- conv input is ``[C, H, W]`` or batched ``[B, C, H, W]``; conv weights are
  ``[K, C, kh, kw]`` (K output channels).
- deconv (transposed conv) weights are ``[C_in, C_out, kh, kw]``; its shape
  arithmetic is the exact inverse of conv's.
- fully connected weights are ``[D_out, D_in]``.
- ``activation`` is one of ``relu``, ``sigmoid``, ``tanh``, ``identity``.

Every forward has a matching backward returning exact gradients of the
activated output; the test suite checks them against central finite
differences.
"""

from __future__ import annotations

import numpy as np

from .tensor import NumericsError, ensure_finite

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


def apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if activation == "tanh":
        return np.tanh(z)
    if activation == "identity":
        return z
    raise NumericsError(f"unknown activation {activation!r}")


def activation_grad(z: np.ndarray, y: np.ndarray, activation: str) -> np.ndarray:
    """d(activation)/dz given preactivation z and output y."""
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    if activation == "sigmoid":
        return y * (1.0 - y)
    if activation == "tanh":
        return 1.0 - y * y
    if activation == "identity":
        return np.ones_like(z)
    raise NumericsError(f"unknown activation {activation!r}")


def conv_output_extent(in_extent: int, kernel: int, stride: int, pad: int) -> int:
    out = (in_extent + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise NumericsError(
            f"conv output extent {out} < 1 for input {in_extent}, kernel {kernel}, "
            f"stride {stride}, pad {pad}"
        )
    return out


def deconv_output_extent(in_extent: int, kernel: int, stride: int, pad: int) -> int:
    out = (in_extent - 1) * stride - 2 * pad + kernel
    if out < 1:
        raise NumericsError(
            f"deconv output extent {out} < 1 for input {in_extent}, kernel {kernel}, "
            f"stride {stride}, pad {pad}"
        )
    return out


def _with_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], False
    if x.ndim == rank + 1:
        return x, True
    raise NumericsError(f"expected rank {rank} or {rank + 1} array, got shape {x.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int,
            oh: int, ow: int) -> np.ndarray:
    """Patches of padded ``x[B,C,H,W]`` as ``[B, C*kh*kw, oh*ow]``."""
    b, c, h, w = x.shape
    padded = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    padded[:, :, ph:ph + h, pw:pw + w] = x
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di, dj] = padded[:, :, di:di + sh * oh:sh, dj:dj + sw * ow:sw]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, c: int, h: int, w: int, kh: int, kw: int,
            sh: int, sw: int, ph: int, pw: int, oh: int, ow: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to ``[B,C,H,W]``."""
    b = cols.shape[0]
    cols6 = cols.reshape(b, c, kh, kw, oh, ow)
    padded = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            padded[:, :, di:di + sh * oh:sh, dj:dj + sw * ow:sw] += cols6[:, :, di, dj]
    return padded[:, :, ph:ph + h, pw:pw + w]


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias) -> None:
    if weights.ndim != 4:
        raise NumericsError(f"conv weights must be rank 4 [K,C,kh,kw], got shape {weights.shape}")
    if x.shape[1] != weights.shape[1]:
        raise NumericsError(
            f"conv input channels {x.shape[1]} != weight input channels {weights.shape[1]}"
        )
    if bias is not None and bias.shape != (weights.shape[0],):
        raise NumericsError(
            f"conv bias shape {bias.shape} != output channels ({weights.shape[0]},)"
        )


def conv2d_forward(x: np.ndarray, weights: np.ndarray, stride=(1, 1), padding=(0, 0),
                   bias: np.ndarray | None = None, activation: str = "identity") -> np.ndarray:
    """Strided cross-correlation of ``x`` with ``weights`` plus optional bias."""
    x, batched = _with_batch(np.asarray(x, dtype=np.float64), 3)
    weights = np.asarray(weights, dtype=np.float64)
    _check_conv_shapes(x, weights, bias)
    b, c, h, w = x.shape
    k, _, kh, kw = weights.shape
    sh, sw = stride
    ph, pw = padding
    oh = conv_output_extent(h, kh, sh, ph)
    ow = conv_output_extent(w, kw, sw, pw)
    cols = _im2col(x, kh, kw, sh, sw, ph, pw, oh, ow)
    z = np.einsum("kp,bpo->bko", weights.reshape(k, -1), cols, optimize=True)
    if bias is not None:
        z += bias[None, :, None]
    y = apply_activation(z, activation).reshape(b, k, oh, ow)
    ensure_finite("conv2d_forward", y)
    return y if batched else y[0]


def conv2d_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray,
                    stride=(1, 1), padding=(0, 0), bias: np.ndarray | None = None,
                    activation: str = "identity"):
    """Gradients of the activated conv output.

    Returns ``(grad_input, grad_weights)`` or ``(grad_input, grad_weights,
    grad_bias)`` when a bias is present.
    """
    x, batched = _with_batch(np.asarray(x, dtype=np.float64), 3)
    grad_out, _ = _with_batch(np.asarray(grad_out, dtype=np.float64), 3)
    weights = np.asarray(weights, dtype=np.float64)
    _check_conv_shapes(x, weights, bias)
    b, c, h, w = x.shape
    k, _, kh, kw = weights.shape
    sh, sw = stride
    ph, pw = padding
    oh = conv_output_extent(h, kh, sh, ph)
    ow = conv_output_extent(w, kw, sw, pw)
    if grad_out.shape != (b, k, oh, ow):
        raise NumericsError(
            f"conv grad_out shape {grad_out.shape} != forward output {(b, k, oh, ow)}"
        )
    cols = _im2col(x, kh, kw, sh, sw, ph, pw, oh, ow)
    wmat = weights.reshape(k, -1)
    z = np.einsum("kp,bpo->bko", wmat, cols, optimize=True)
    if bias is not None:
        z += bias[None, :, None]
    y = apply_activation(z, activation)
    gz = grad_out.reshape(b, k, oh * ow) * activation_grad(z, y, activation)
    grad_w = np.einsum("bko,bpo->kp", gz, cols, optimize=True).reshape(weights.shape)
    grad_cols = np.einsum("kp,bko->bpo", wmat, gz, optimize=True)
    grad_x = _col2im(grad_cols, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow)
    ensure_finite("conv2d_backward", grad_w)
    grad_x = grad_x if batched else grad_x[0]
    if bias is None:
        return grad_x, grad_w
    grad_b = gz.sum(axis=(0, 2))
    return grad_x, grad_w, grad_b


def _check_deconv_shapes(x: np.ndarray, weights: np.ndarray, bias) -> None:
    if weights.ndim != 4:
        raise NumericsError(
            f"deconv weights must be rank 4 [C_in,C_out,kh,kw], got shape {weights.shape}"
        )
    if x.shape[1] != weights.shape[0]:
        raise NumericsError(
            f"deconv input channels {x.shape[1]} != weight input channels {weights.shape[0]}"
        )
    if bias is not None and bias.shape != (weights.shape[1],):
        raise NumericsError(
            f"deconv bias shape {bias.shape} != output channels ({weights.shape[1]},)"
        )


def deconv2d_forward(x: np.ndarray, weights: np.ndarray, stride=(1, 1), padding=(0, 0),
                     bias: np.ndarray | None = None, activation: str = "identity") -> np.ndarray:
    """Transposed convolution: the adjoint of conv2d's input map."""
    x, batched = _with_batch(np.asarray(x, dtype=np.float64), 3)
    weights = np.asarray(weights, dtype=np.float64)
    _check_deconv_shapes(x, weights, bias)
    b, cin, h, w = x.shape
    _, cout, kh, kw = weights.shape
    sh, sw = stride
    ph, pw = padding
    oh = deconv_output_extent(h, kh, sh, ph)
    ow = deconv_output_extent(w, kw, sw, pw)
    wmat = weights.reshape(cin, -1)
    cols = np.einsum("cp,bco->bpo", wmat, x.reshape(b, cin, h * w), optimize=True)
    z = _col2im(cols, cout, oh, ow, kh, kw, sh, sw, ph, pw, h, w)
    if bias is not None:
        z += bias[None, :, None, None]
    y = apply_activation(z, activation)
    ensure_finite("deconv2d_forward", y)
    return y if batched else y[0]


def deconv2d_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray,
                      stride=(1, 1), padding=(0, 0), bias: np.ndarray | None = None,
                      activation: str = "identity"):
    """Gradients of the activated deconv output, mirroring conv2d_backward."""
    x, batched = _with_batch(np.asarray(x, dtype=np.float64), 3)
    grad_out, _ = _with_batch(np.asarray(grad_out, dtype=np.float64), 3)
    weights = np.asarray(weights, dtype=np.float64)
    _check_deconv_shapes(x, weights, bias)
    b, cin, h, w = x.shape
    _, cout, kh, kw = weights.shape
    sh, sw = stride
    ph, pw = padding
    oh = deconv_output_extent(h, kh, sh, ph)
    ow = deconv_output_extent(w, kw, sw, pw)
    if grad_out.shape != (b, cout, oh, ow):
        raise NumericsError(
            f"deconv grad_out shape {grad_out.shape} != forward output {(b, cout, oh, ow)}"
        )
    wmat = weights.reshape(cin, -1)
    xf = x.reshape(b, cin, h * w)
    cols = np.einsum("cp,bco->bpo", wmat, xf, optimize=True)
    z = _col2im(cols, cout, oh, ow, kh, kw, sh, sw, ph, pw, h, w)
    if bias is not None:
        z += bias[None, :, None, None]
    y = apply_activation(z, activation)
    gz = grad_out * activation_grad(z, y, activation)
    gz_cols = _im2col(gz, kh, kw, sh, sw, ph, pw, h, w)
    grad_x = np.einsum("cp,bpo->bco", wmat, gz_cols, optimize=True).reshape(b, cin, h, w)
    grad_w = np.einsum("bco,bpo->cp", xf, gz_cols, optimize=True).reshape(weights.shape)
    ensure_finite("deconv2d_backward", grad_w)
    grad_x = grad_x if batched else grad_x[0]
    if bias is None:
        return grad_x, grad_w
    grad_b = gz.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None,
               activation: str = "identity") -> np.ndarray:
    """Affine map ``weights @ x + bias`` with activation; x is [D] or [B, D]."""
    x, batched = _with_batch(np.asarray(x, dtype=np.float64), 1)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != x.shape[1]:
        raise NumericsError(
            f"fc weights shape {weights.shape} incompatible with input dim {x.shape[1]}"
        )
    z = x @ weights.T
    if bias is not None:
        if bias.shape != (weights.shape[0],):
            raise NumericsError(f"fc bias shape {bias.shape} != ({weights.shape[0]},)")
        z = z + bias
    y = apply_activation(z, activation)
    ensure_finite("fc_forward", y)
    return y if batched else y[0]


def fc_backward(x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray,
                bias: np.ndarray | None = None, activation: str = "identity"):
    x, batched = _with_batch(np.asarray(x, dtype=np.float64), 1)
    grad_out, _ = _with_batch(np.asarray(grad_out, dtype=np.float64), 1)
    weights = np.asarray(weights, dtype=np.float64)
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise NumericsError(
            f"fc grad_out shape {grad_out.shape} != {(x.shape[0], weights.shape[0])}"
        )
    z = x @ weights.T
    if bias is not None:
        z = z + bias
    y = apply_activation(z, activation)
    gz = grad_out * activation_grad(z, y, activation)
    grad_x = gz @ weights
    grad_w = gz.T @ x
    ensure_finite("fc_backward", grad_w)
    grad_x = grad_x if batched else grad_x[0]
    if bias is None:
        return grad_x, grad_w
    return grad_x, grad_w, gz.sum(axis=0)
