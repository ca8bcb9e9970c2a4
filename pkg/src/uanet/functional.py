"""Differentiable kernels: convolution, pooling, activations, resampling, loss.

Spatial ops take ``C x H x W`` tensors or batched ``N x C x H x W`` tensors.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _accumulate, _norm_axis


def _as_batched(x: np.ndarray) -> np.ndarray:
    if x.ndim == 3:
        return x[None]
    if x.ndim == 4:
        return x
    raise ShapeError(f"expected C x H x W or N x C x H x W, got {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


# ----------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """Cross-correlation with zero padding (no kernel flip)."""
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"bad conv parameters stride={stride} padding={padding} dilation={dilation}")
    unbatched = x.ndim == 3
    xb = _as_batched(x.data)
    n, c, h, w = xb.shape
    if weight.ndim != 4 or weight.shape[1] != c:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {weight.shape}")
    c_out, _, kh, kw = weight.shape
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: non-positive output extent {ho}x{wo} for input {x.shape}")

    if padding:
        xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xb
    span_h = dilation * (kh - 1) + 1
    span_w = dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (span_h, span_w), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride,
              ::dilation, ::dilation]
    # cols[b] is (c*kh*kw) x (ho*wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    wmat = weight.data.reshape(c_out, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, c_out, ho, wo)
    if unbatched:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)
    result = Tensor._make(out, parents, "conv2d")

    def backward(g):
        gmat = _as_batched(g).reshape(n, c_out, ho * wo)
        if weight.requires_grad:
            dw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(weight, dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gmat.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat).reshape(n, c, kh, kw, ho, wo)
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                r0 = i * dilation
                for j in range(kw):
                    c0 = j * dilation
                    dxp[:, :, r0 : r0 + (ho - 1) * stride + 1 : stride,
                        c0 : c0 + (wo - 1) * stride + 1 : stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            _accumulate(x, dxp[0] if unbatched else dxp)

    result._backward = backward
    return result


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties send the gradient to the first cell in scan order."""
    unbatched = x.ndim == 3
    xb = _as_batched(x.data)
    n, c, h, w = xb.shape
    if window < 1 or h % window or w % window:
        raise ShapeError(f"maxpool2d: extent {h}x{w} not divisible by window {window}")
    ho, wo = h // window, w // window
    blocks = xb.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, ho, wo, window * window)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    result = Tensor._make(out[0] if unbatched else out, (x,), "maxpool2d")

    def backward(g):
        gb = _as_batched(g)
        dblocks = np.zeros(blocks.shape, dtype=xb.dtype)
        np.put_along_axis(dblocks, arg[..., None], gb[..., None], axis=-1)
        dx = dblocks.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5)
        dx = dx.reshape(n, c, h, w)
        _accumulate(x, dx[0] if unbatched else dx)

    result._backward = backward
    return result


# ----------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor._make(x.data * mask, (x,), "relu")
    out._backward = lambda g: _accumulate(x, g * mask)
    return out


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp(-softplus(-x)) never overflows
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_np(x.data)
    out = Tensor._make(s, (x,), "sigmoid")
    out._backward = lambda g: _accumulate(x, g * s * (1.0 - s))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._make(s, (x,), "softmax")

    def backward(g):
        _accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    out._backward = backward
    return out


# ----------------------------------------------------------------------
# resampling


def _bilinear_matrix(size: int, factor: int, dtype) -> np.ndarray:
    """Rows map output coordinates to source weights (align_corners=False).

    Output index ``o`` samples source coordinate ``(o + 0.5) / factor - 0.5``,
    clamped below at 0; neighbours beyond the last row reuse the last row.
    """
    out_size = size * factor
    src = (np.arange(out_size) + 0.5) / factor - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.floor(src).astype(int)
    i0 = np.minimum(i0, size - 1)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    mat = np.zeros((out_size, size), dtype=dtype)
    rows = np.arange(out_size)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def upsample(x: Tensor, factor: int, mode: str = "nearest") -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.ndim < 2:
        raise ShapeError(f"upsample needs spatial axes, got {x.shape}")
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    if mode == "nearest":
        out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
        result = Tensor._make(out, (x,), "upsample_nearest")

        def backward(g):
            lead = g.shape[:-2]
            g = g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1))
            _accumulate(x, g)

    elif mode == "bilinear":
        ah = _bilinear_matrix(h, factor, x.dtype)
        aw = _bilinear_matrix(w, factor, x.dtype)
        out = ah @ x.data @ aw.T
        result = Tensor._make(out, (x,), "upsample_bilinear")

        def backward(g):
            _accumulate(x, ah.T @ g @ aw)

    else:
        raise ValueError(f"unknown upsample mode {mode!r}")
    result._backward = backward
    return result


def flip(x: Tensor, axis: int) -> Tensor:
    out = Tensor._make(np.flip(x.data, axis=axis).copy(), (x,), "flip")
    out._backward = lambda g: _accumulate(x, np.flip(g, axis=axis))
    return out


# ----------------------------------------------------------------------
# loss


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits.

    Uses ``max(x, 0) - x*t + log(1 + exp(-|x|))`` so large logits never overflow.
    """
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {t.shape}")
    x = logits.data
    t = t.astype(x.dtype, copy=False)
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    count = x.size
    out = Tensor._make(np.asarray(per.sum() / count, dtype=x.dtype), (logits,), "bce")

    def backward(g):
        _accumulate(logits, g * (sigmoid_np(x) - t) / count)

    out._backward = backward
    return out
