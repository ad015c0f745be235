"""Post-training int8 quantization and the integer inference path.

Per-tensor affine scheme: ``real = scale * (q - zero_point)``. Weights are
symmetric (zero point 0, codes in [-127, 127]); activations are asymmetric
with their range taken from calibration min/max. Weight codes are chosen by
error-feedback rounding over calibration inputs (see :func:`gptq_round`). Between layers the int32
accumulator is rescaled by a 31-bit fixed-point multiplier and a right
shift, rounding half away from zero, then clamped to int8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .kernels import im2col, conv_output_size, sigmoid
from .model import ModelGraph, OutputMaps, forward_batch

QMIN, QMAX = -128, 127
SCALE_FLOOR = 1e-6
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero point {self.zero_point} outside int8")


@dataclass
class QTensor:
    """int8 codes with their quantization parameters; shape (C, H, W) or batched."""

    data: np.ndarray
    qp: QuantParams

    def dequantize(self) -> np.ndarray:
        return dequantize(self.data, self.qp)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, qp: QuantParams, qmin: int = QMIN, qmax: int = QMAX) -> np.ndarray:
    q = round_half_away(np.asarray(x, np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, qmin, qmax).astype(np.int8)


def dequantize(q, qp: QuantParams) -> np.ndarray:
    return qp.scale * (np.asarray(q, np.float64) - qp.zero_point)


def symmetric_params(x) -> QuantParams:
    peak = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return QuantParams(max(peak / QMAX, SCALE_FLOOR), 0)


def asymmetric_params(lo: float, hi: float) -> QuantParams:
    """Affine params covering [lo, hi] (widened to include 0, so 0 is exact)."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    scale = max((hi - lo) / (QMAX - QMIN), SCALE_FLOOR)
    zp = int(np.clip(round_half_away(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def quantize_weights(w) -> tuple[np.ndarray, QuantParams]:
    qp = symmetric_params(w)
    return quantize(w, qp, -QMAX, QMAX), qp


def quantize_multiplier(m: float) -> tuple[int, int]:
    """Express ``m > 0`` as ``multiplier * 2**-shift`` with a 31-bit multiplier."""
    if not m > 0:
        raise ValueError(f"requantization factor must be positive, got {m}")
    mant, exp = math.frexp(m)
    mult = int(round(mant * (1 << 31)))
    if mult == 1 << 31:
        mult //= 2
        exp += 1
    shift = 31 - exp
    if shift < 1:
        raise ValueError(f"requantization factor {m} too large")
    return mult, shift


def requantize(acc: np.ndarray, multiplier: int, shift: int, zero_point: int,
               lo: int = QMIN, hi: int = QMAX) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.int64)
    if shift >= 63:
        scaled = np.zeros_like(acc)
    else:
        prod = acc * np.int64(multiplier)
        scaled = (np.abs(prod) + (np.int64(1) << (shift - 1))) >> shift
        scaled = np.where(prod < 0, -scaled, scaled)
    return np.clip(scaled + zero_point, lo, hi).astype(np.int8)


def int8_conv_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None,
                      in_zero_point: int, out_zero_point: int, multiplier: int, shift: int,
                      stride: int = 1, padding: int = 0, relu: bool = False,
                      check_overflow: bool = False) -> np.ndarray:
    """Integer cross-correlation, requantized to int8.

    ``x`` holds int8 codes, (C, H, W) or (N, C, H, W); padding uses the input
    zero point so padded taps contribute exactly zero. Products are summed in
    float64, which is exact for int8 x int9 terms well past the int32 range,
    and then taken as integers.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.dtype != np.int8 or np.asarray(weights).dtype != np.int8:
        raise TypeError("int8_conv_forward expects int8 input and weights")
    c_out, c_in, kh, kw = weights.shape
    if xb.shape[1] != c_in:
        raise ValueError(f"input has {xb.shape[1]} channels, weights expect {c_in}")
    n, _, h, w = xb.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    centered = xb.astype(np.float64) - in_zero_point
    cols = im2col(centered, kh, kw, stride, padding, pad_value=0.0)
    acc = np.matmul(weights.reshape(c_out, -1).astype(np.float64), cols)
    if bias is not None:
        acc += np.asarray(bias, np.float64)[None, :, None]
    acc = acc.astype(np.int64)
    if check_overflow and (acc.min(initial=0) < INT32_MIN or acc.max(initial=0) > INT32_MAX):
        raise OverflowError("int32 accumulator overflow")
    lo = max(QMIN, out_zero_point) if relu else QMIN
    out = requantize(acc, multiplier, shift, out_zero_point, lo, QMAX).reshape(n, c_out, ho, wo)
    return out[0] if single else out


@dataclass
class QuantLayer:
    index: int
    weights: np.ndarray  # int8
    w_qp: QuantParams
    bias: np.ndarray  # int32
    in_qp: QuantParams
    out_qp: QuantParams
    multiplier: int
    shift: int
    relu: bool


@dataclass
class QuantizedModel:
    """Integer-only network over the same layer list as its float source."""

    float_model: ModelGraph
    input_qp: QuantParams
    layers: dict[int, QuantLayer] = field(default_factory=dict)
    head_saturation: float | None = None

    @property
    def output_qp(self) -> QuantParams:
        return self.layers[max(self.layers)].out_qp

    def shapes(self, input_shape=None):
        return self.float_model.shapes(input_shape)

    @property
    def graph_layers(self):
        return self.float_model.layers

    def param_bytes(self) -> int:
        return sum(ql.weights.size + 4 * ql.bias.size for ql in self.layers.values())

    def head_luts(self) -> np.ndarray:
        """(C, 256) table: dequantized head output for every int8 code, per channel.

        With a head saturation set, sigmoid codes at or past the clipped
        logit range read as exactly 0 or 1, so the flat background of a
        map stays zero instead of summing to a spurious mass.
        """
        codes = np.arange(QMIN, QMAX + 1)
        real = dequantize(codes, self.output_qp)
        sat = self.head_saturation
        step = self.output_qp.scale  # the clamp code sits within a step of the limit
        luts = []
        for kind in self.float_model.head_activations:
            if kind != "sigmoid":
                luts.append(real)
                continue
            p = sigmoid(real)
            if sat is not None:
                p = np.where(real < step - sat, 0.0, np.where(real > sat - step, 1.0, p))
            luts.append(p)
        return np.stack(luts)


INPUT_QP = QuantParams(1.0 / 255.0, -128)


def quantize_image(pixels: np.ndarray) -> np.ndarray:
    """uint8 pixels -> int8 codes under ``INPUT_QP`` (exact: code = pixel - 128)."""
    return (np.asarray(pixels, np.int16) - 128).astype(np.int8)


HEAD_SATURATION = 6.0  # |logit| past which a sigmoid head is flat to within 2.5e-3


def gptq_round(w: np.ndarray, hessian: np.ndarray, qp: QuantParams,
               damping: float = 0.01) -> np.ndarray:
    """Round ``w`` (C_out, K) to int8 codes one input column at a time.

    Each column's rounding error is pushed onto the columns not yet rounded,
    weighted by the inverse of ``hessian = X X^T`` over calibration inputs,
    so the layer output (not the weights) stays close to the float one. The
    grid is the same per-tensor symmetric one plain rounding uses.
    """
    w = np.array(w, dtype=np.float64)
    h = np.array(hessian, dtype=np.float64)
    dead = np.diag(h) == 0
    h[dead, dead] = 1.0
    w[:, dead] = 0.0
    h += damping * np.mean(np.diag(h)) * np.eye(len(h))
    u = np.linalg.cholesky(np.linalg.inv(h)).T
    codes = np.empty(w.shape, dtype=np.int8)
    for j in range(w.shape[1]):
        q = np.clip(round_half_away(w[:, j] / qp.scale), -QMAX, QMAX)
        codes[:, j] = q
        err = (w[:, j] - q * qp.scale) / u[j, j]
        w[:, j + 1:] -= np.outer(err, u[j, j + 1:])
    return codes


def _float_ranges(model: ModelGraph, images: np.ndarray, batch_size: int):
    """Per-channel min/max of every tensor in the float forward pass."""
    lo, hi = None, None
    for start in range(0, len(images), batch_size):
        x = images[start:start + batch_size].astype(np.float32) / 255.0
        _, outs = forward_batch(model, x, keep=True)
        b_lo = [o.min(axis=(0, 2, 3)) for o in outs]
        b_hi = [o.max(axis=(0, 2, 3)) for o in outs]
        lo = b_lo if lo is None else [np.minimum(a, b) for a, b in zip(lo, b_lo)]
        hi = b_hi if hi is None else [np.maximum(a, b) for a, b in zip(hi, b_hi)]
    return lo, hi


def _input_hessian(xq: np.ndarray, zero_point: int, layer, batch_size: int) -> np.ndarray:
    (kh, kw), k = layer.kernel, layer.in_channels * layer.kernel[0] * layer.kernel[1]
    h = np.zeros((k, k))
    for start in range(0, len(xq), batch_size):
        x = xq[start:start + batch_size].astype(np.float64) - zero_point
        cols = im2col(x, kh, kw, layer.stride, layer.padding)
        flat = cols.transpose(1, 0, 2).reshape(k, -1)
        h += flat @ flat.T
    return h


def calibrate(model: ModelGraph, calibration_images, batch_size: int = 32,
              rounding: str = "gptq", head_saturation: float | None = HEAD_SATURATION
              ) -> QuantizedModel:
    """Quantize ``model`` from uint8 calibration frames.

    Activation ranges are the float min/max over the calibration set. For
    the output tensor, sigmoid channels only count up to ``head_saturation``
    in logit space, so flat sigmoid tails do not waste codes the linear
    depth channel needs. ``rounding="gptq"`` rounds weights with error
    feedback against the int8 activations the layer will actually see;
    ``"nearest"`` is plain round-to-nearest.
    """
    if rounding not in ("gptq", "nearest"):
        raise ValueError(f"unknown rounding {rounding!r}")
    images = np.asarray(calibration_images)
    if images.ndim == 2:
        images = images[None]
    if len(images) == 0:
        raise ValueError("calibration set is empty")
    if images.ndim == 3:
        images = images[:, None]
    lo, hi = _float_ranges(model, images, batch_size)

    qm = QuantizedModel(model, INPUT_QP, head_saturation=head_saturation)
    in_qp = INPUT_QP
    layers = model.layers
    n_layers = len(layers)
    last = model.conv_indices()[-1]
    xq = quantize_image(images[:, 0])[:, None]
    for i in model.conv_indices():
        layer = layers[i]
        relu = i + 1 < n_layers and layers[i + 1].kind == "activation" \
            and layers[i + 1].activation == "relu"
        # output tensor index in ``outs``: after the fused activation when present
        k = i + 2 if relu else i + 1
        t_lo, t_hi = lo[k], hi[k]
        if i == last and head_saturation is not None:
            sig = np.array([a == "sigmoid" for a in model.head_activations])
            t_lo = np.where(sig, np.maximum(t_lo, -head_saturation), t_lo)
            t_hi = np.where(sig, np.minimum(t_hi, head_saturation), t_hi)
        out_qp = asymmetric_params(t_lo.min(), t_hi.max())
        w, b = model.params[i]
        w_qp = symmetric_params(w)
        if rounding == "gptq":
            hess = _input_hessian(xq, in_qp.zero_point, layer, batch_size)
            qw = gptq_round(w.reshape(len(w), -1), hess, w_qp).reshape(w.shape)
        else:
            qw = quantize(w, w_qp, -QMAX, QMAX)
        acc_scale = in_qp.scale * w_qp.scale
        qb = np.clip(round_half_away(np.asarray(b, np.float64) / acc_scale),
                     INT32_MIN, INT32_MAX).astype(np.int32)
        mult, shift = quantize_multiplier(acc_scale / out_qp.scale)
        ql = QuantLayer(i, qw, w_qp, qb, in_qp, out_qp, mult, shift, relu)
        qm.layers[i] = ql
        if i != last:
            xq = np.concatenate([
                int8_conv_forward(xq[s:s + batch_size], qw, qb, in_qp.zero_point,
                                  out_qp.zero_point, mult, shift, layer.stride,
                                  layer.padding, relu)
                for s in range(0, len(xq), batch_size)])
        in_qp = out_qp
    return qm


def int8_forward_codes(qm: QuantizedModel, pixels: np.ndarray,
                       check_overflow: bool = False) -> np.ndarray:
    """uint8 images (N, H, W) or (H, W) -> int8 output codes (N, C, 20, 20)."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[None]
    x = quantize_image(pixels)[:, None]
    layers = qm.float_model.layers
    for i, layer in enumerate(layers):
        if not layer.is_conv:
            prev = layers[i - 1] if i else None
            if layer.activation == "relu" and prev is not None and prev.is_conv \
                    and qm.layers[i - 1].relu:
                continue
            raise ValueError(f"layer {i}: standalone {layer.activation} has no int8 kernel")
        ql = qm.layers[i]
        x = int8_conv_forward(x, ql.weights, ql.bias, ql.in_qp.zero_point,
                              ql.out_qp.zero_point, ql.multiplier, ql.shift,
                              layer.stride, layer.padding, ql.relu, check_overflow)
    return x


def int8_forward_batch(qm: QuantizedModel, pixels: np.ndarray) -> np.ndarray:
    """Head-activated output maps (N, 3, 20, 20) through the integer path."""
    codes = int8_forward_codes(qm, pixels)
    luts = qm.head_luts()
    idx = codes.astype(np.int16) - QMIN
    return np.stack([luts[c][idx[:, c]] for c in range(codes.shape[1])], axis=1)


def int8_forward(qm: QuantizedModel, pixels: np.ndarray) -> OutputMaps:
    return OutputMaps.from_tensor(int8_forward_batch(qm, pixels)[0])
