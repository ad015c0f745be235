"""Dense float32 kernels: 2-D convolution (forward/backward) and activations.

Tensors are numpy arrays laid out (C, H, W) for a single image or
(N, C, H, W) for a batch. Convolutions are plain cross-correlations
lowered to one matrix product through an im2col buffer.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "linear")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a (C,H,W) or (N,C,H,W) tensor, got shape {x.shape}")


def _check_conv_shapes(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None,
                       stride: int, padding: int) -> None:
    if weights.ndim != 4:
        raise ValueError(f"weights must be (C_out, C_in, kh, kw), got shape {weights.shape}")
    c_out, c_in, kh, kw = weights.shape
    if x.shape[1] != c_in:
        raise ValueError(f"input has {x.shape[1]} channels but weights expect C_in={c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    h, w = x.shape[2:]
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})")


def pad_hw(x: np.ndarray, padding: int, value=0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  constant_values=value)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, pad_value=0) -> np.ndarray:
    """(N, C, H, W) -> (N, C*kh*kw, Ho*Wo), row order (c, a, b) matching weights.reshape."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = pad_hw(x, padding, pad_value)
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, a, b] = xp[:, :, a:a + stride * (ho - 1) + 1:stride,
                                  b:b + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int,
           padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a:a + stride * (ho - 1) + 1:stride,
                b:b + stride * (wo - 1) + 1:stride] += cols[:, :, a, b]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None,
                   stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` with ``weights`` and add ``bias``.

    Accepts a single (C_in, H, W) tensor or an (N, C_in, H, W) batch and
    returns the matching rank.
    """
    xb, single = _as_batch(np.asarray(x))
    weights = np.asarray(weights)
    _check_conv_shapes(xb, weights, bias, stride, padding)
    c_out, _, kh, kw = weights.shape
    n, _, h, w = xb.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    cols = im2col(xb, kh, kw, stride, padding)
    out = np.matmul(weights.reshape(c_out, -1), cols)
    if bias is not None:
        out += np.asarray(bias, dtype=out.dtype)[None, :, None]
    out = out.reshape(n, c_out, ho, wo)
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, weights: np.ndarray, upstream: np.ndarray,
                    stride: int = 1, padding: int = 0
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias."""
    xb, single = _as_batch(np.asarray(x))
    gb, _ = _as_batch(np.asarray(upstream))
    weights = np.asarray(weights)
    _check_conv_shapes(xb, weights, None, stride, padding)
    c_out, c_in, kh, kw = weights.shape
    n, _, h, w = xb.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if gb.shape != (n, c_out, ho, wo):
        raise ValueError(f"upstream gradient shape {gb.shape} != forward output "
                         f"{(n, c_out, ho, wo)}")
    cols = im2col(xb, kh, kw, stride, padding)
    g = gb.reshape(n, c_out, ho * wo)
    grad_w = np.einsum("nop,nkp->ok", g, cols, optimize=True).reshape(weights.shape)
    grad_b = g.sum(axis=(0, 2))
    dcols = np.matmul(weights.reshape(c_out, -1).T, g)
    grad_x = col2im(dcols, xb.shape, kh, kw, stride, padding)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "linear":
        return np.array(x, copy=True)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(y: np.ndarray, upstream: np.ndarray, kind: str) -> np.ndarray:
    """Gradient w.r.t. the activation input, given its output ``y``."""
    if kind == "relu":
        return upstream * (y > 0)
    if kind == "sigmoid":
        return upstream * y * (1 - y)
    if kind == "linear":
        return upstream
    raise ValueError(f"unknown activation {kind!r}")
