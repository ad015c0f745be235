"""NTRK1 model container (little-endian binary).

Layout::

    magic        5s   b"NTRK1"
    flags        u8   bit 0: quant section present
    n_layers     u32
    input shape  3*u32
    mac_budget   u64
    n_heads      u32, then n_heads * u8 activation codes
    per layer    u8 kind, u8 activation, 6*u32 (in_c, out_c, kh, kw, stride, pad)
    per conv     f32 weights (out_c*in_c*kh*kw, C order), f32 bias (out_c)
    quant section (flags & 1):
      input      f64 scale, i32 zero_point
      head sat   f64 sigmoid-logit saturation of the output LUT (NaN: none)
      per conv   f64 w_scale, f64 in_scale, i32 in_zp, f64 out_scale, i32 out_zp,
                 i32 multiplier, i32 shift, u8 relu,
                 i8 weights (same order as the f32 blob), i32 bias (out_c)
"""

from __future__ import annotations

import io
import math
from pathlib import Path
import struct

import numpy as np

from .model import LAYER_KINDS, LayerDesc, ModelGraph
from .quant import QuantizedModel, QuantLayer, QuantParams

MAGIC = b"NTRK1"
ACT_CODES = {None: 0, "relu": 1, "sigmoid": 2, "linear": 3}
ACT_NAMES = {v: k for k, v in ACT_CODES.items()}
FLAG_QUANT = 1


class ContainerError(ValueError):
    pass


def _pack(fh, fmt, *vals):
    fh.write(struct.pack("<" + fmt, *vals))


def _unpack(fh, fmt):
    size = struct.calcsize("<" + fmt)
    raw = fh.read(size)
    if len(raw) != size:
        raise ContainerError("truncated model file")
    return struct.unpack("<" + fmt, raw)


def _blob(fh, dtype, count):
    dtype = np.dtype(dtype).newbyteorder("<")
    raw = fh.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise ContainerError("truncated parameter blob")
    return np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="))


def dumps(model: ModelGraph, quantized: QuantizedModel | None = None) -> bytes:
    fh = io.BytesIO()
    fh.write(MAGIC)
    _pack(fh, "B", FLAG_QUANT if quantized is not None else 0)
    _pack(fh, "I", len(model.layers))
    _pack(fh, "3I", *model.input_shape)
    _pack(fh, "Q", model.mac_budget)
    _pack(fh, "I", len(model.head_activations))
    for kind in model.head_activations:
        _pack(fh, "B", ACT_CODES[kind])
    for layer in model.layers:
        _pack(fh, "BB6I", LAYER_KINDS.index(layer.kind), ACT_CODES[layer.activation],
              layer.in_channels, layer.out_channels, *layer.kernel, layer.stride, layer.padding)
    for i in model.conv_indices():
        w, b = model.params[i]
        fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if quantized is not None:
        _pack(fh, "di", quantized.input_qp.scale, quantized.input_qp.zero_point)
        sat = quantized.head_saturation
        _pack(fh, "d", math.nan if sat is None else sat)
        for i in model.conv_indices():
            ql = quantized.layers[i]
            _pack(fh, "ddidiiiB", ql.w_qp.scale, ql.in_qp.scale, ql.in_qp.zero_point,
                  ql.out_qp.scale, ql.out_qp.zero_point, ql.multiplier, ql.shift, int(ql.relu))
            fh.write(np.ascontiguousarray(ql.weights, dtype="i1").tobytes())
            fh.write(np.ascontiguousarray(ql.bias, dtype="<i4").tobytes())
    return fh.getvalue()


def loads(data: bytes) -> tuple[ModelGraph, QuantizedModel | None]:
    fh = io.BytesIO(data)
    if fh.read(len(MAGIC)) != MAGIC:
        raise ContainerError("not an NTRK1 model file")
    (flags,) = _unpack(fh, "B")
    (n_layers,) = _unpack(fh, "I")
    input_shape = _unpack(fh, "3I")
    (budget,) = _unpack(fh, "Q")
    (n_heads,) = _unpack(fh, "I")
    heads = tuple(ACT_NAMES[_unpack(fh, "B")[0]] for _ in range(n_heads))
    layers = []
    for _ in range(n_layers):
        kind, act, c_in, c_out, kh, kw, stride, pad = _unpack(fh, "BB6I")
        if kind >= len(LAYER_KINDS) or act not in ACT_NAMES:
            raise ContainerError(f"bad layer descriptor (kind {kind}, activation {act})")
        layers.append(LayerDesc(LAYER_KINDS[kind], c_in, c_out, (kh, kw), stride, pad,
                                ACT_NAMES[act]))
    model = ModelGraph(layers, {}, heads, tuple(input_shape), budget)
    for i in model.conv_indices():
        layer = layers[i]
        shape = (layer.out_channels, layer.in_channels, *layer.kernel)
        w = _blob(fh, "f4", int(np.prod(shape))).reshape(shape)
        b = _blob(fh, "f4", layer.out_channels)
        model.params[i] = (w, b)
    model.validate(check_budget=False)
    quantized = None
    if flags & FLAG_QUANT:
        scale, zp = _unpack(fh, "di")
        (sat,) = _unpack(fh, "d")
        quantized = QuantizedModel(model, QuantParams(scale, zp),
                                   head_saturation=None if math.isnan(sat) else sat)
        for i in model.conv_indices():
            layer = layers[i]
            w_s, in_s, in_zp, out_s, out_zp, mult, shift, relu = _unpack(fh, "ddidiiiB")
            shape = (layer.out_channels, layer.in_channels, *layer.kernel)
            qw = _blob(fh, "i1", int(np.prod(shape))).reshape(shape)
            qb = _blob(fh, "i4", layer.out_channels)
            quantized.layers[i] = QuantLayer(i, qw, QuantParams(w_s, 0), qb,
                                             QuantParams(in_s, in_zp), QuantParams(out_s, out_zp),
                                             mult, shift, bool(relu))
    if fh.read(1):
        raise ContainerError("trailing bytes after model data")
    return model, quantized


def save_model(path, model: ModelGraph, quantized: QuantizedModel | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model, quantized))
    return path


def load_model(path) -> tuple[ModelGraph, QuantizedModel | None]:
    return loads(Path(path).read_bytes())
