"""Sequential FCNN graph: layer descriptors, parameters and float inference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import ACTIVATIONS, activation_forward, conv2d_forward, conv_output_size

INPUT_SHAPE = (1, 160, 160)
OUTPUT_SHAPE = (3, 20, 20)
# output channel order
LED, DEPTH, POSITION = 0, 1, 2
HEAD_ACTIVATIONS = ("sigmoid", "linear", "sigmoid")

# 78.7 M MACs of the YOLO-style baselines divided by their 8.3x ratio
DEFAULT_MAC_BUDGET = int(78.7e6 / 8.3)
L2_BYTES = 512 * 1024

LAYER_KINDS = ("conv2d", "pointwise", "activation")


@dataclass(frozen=True)
class LayerDesc:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    activation: str | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "activation":
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
            return
        kh, kw = self.kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"conv kernels must be odd-sized, got {self.kernel}")
        if self.kind == "pointwise" and self.kernel != (1, 1):
            raise ValueError("pointwise layers use a 1x1 kernel")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid stride {self.stride} / padding {self.padding}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def is_conv(self) -> bool:
        return self.kind != "activation"

    def output_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = shape
        if not self.is_conv:
            return shape
        if c != self.in_channels:
            raise ValueError(f"layer expects {self.in_channels} input channels, got {c}")
        kh, kw = self.kernel
        return (self.out_channels,
                conv_output_size(h, kh, self.stride, self.padding),
                conv_output_size(w, kw, self.stride, self.padding))

    def macs(self, in_shape: tuple[int, int, int]) -> int:
        if not self.is_conv:
            return 0
        c_out, ho, wo = self.output_shape(in_shape)
        kh, kw = self.kernel
        return ho * wo * c_out * kh * kw * self.in_channels


def conv(c_in: int, c_out: int, k: int = 3, stride: int = 1, padding: int | None = None) -> LayerDesc:
    return LayerDesc("conv2d", c_in, c_out, (k, k), stride, k // 2 if padding is None else padding)


def pointwise(c_in: int, c_out: int) -> LayerDesc:
    return LayerDesc("pointwise", c_in, c_out, (1, 1), 1, 0)


def act(kind: str) -> LayerDesc:
    return LayerDesc("activation", activation=kind)


@dataclass
class ModelGraph:
    """Ordered layers plus float parameters ``params[i] = (weights, bias)`` per conv layer."""

    layers: list[LayerDesc]
    params: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    head_activations: tuple[str, ...] = HEAD_ACTIVATIONS
    input_shape: tuple[int, int, int] = INPUT_SHAPE
    mac_budget: int = DEFAULT_MAC_BUDGET

    def conv_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.is_conv]

    def shapes(self, input_shape: tuple[int, int, int] | None = None) -> list[tuple[int, int, int]]:
        """Activation shapes: entry 0 is the input, entry i+1 the output of layer i."""
        shape = tuple(input_shape or self.input_shape)
        out = [shape]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shapes()[-1]

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.params.values())

    def validate(self, check_budget: bool = True) -> None:
        shapes = self.shapes()
        if shapes[-1][0] != len(self.head_activations):
            raise ValueError(f"{shapes[-1][0]} output channels but "
                             f"{len(self.head_activations)} head activations")
        for i in self.conv_indices():
            layer = self.layers[i]
            if i not in self.params:
                raise ValueError(f"layer {i} has no parameters")
            w, b = self.params[i]
            expected = (layer.out_channels, layer.in_channels, *layer.kernel)
            if w.shape != expected or b.shape != (layer.out_channels,):
                raise ValueError(f"layer {i}: params {w.shape}/{b.shape} do not match {expected}")
        if check_budget:
            from .planner import count_macs
            macs = count_macs(self)
            if macs > self.mac_budget:
                raise ValueError(f"model needs {macs} MACs, over the budget of {self.mac_budget}")

    def copy(self) -> "ModelGraph":
        return ModelGraph(list(self.layers),
                          {i: (w.copy(), b.copy()) for i, (w, b) in self.params.items()},
                          tuple(self.head_activations), tuple(self.input_shape), self.mac_budget)


@dataclass
class OutputMaps:
    led_map: np.ndarray
    depth_map: np.ndarray
    position_map: np.ndarray

    @classmethod
    def from_tensor(cls, t: np.ndarray) -> "OutputMaps":
        if t.shape != OUTPUT_SHAPE:
            raise ValueError(f"expected output tensor {OUTPUT_SHAPE}, got {t.shape}")
        return cls(t[LED], t[DEPTH], t[POSITION])

    def to_tensor(self) -> np.ndarray:
        return np.stack([self.led_map, self.depth_map, self.position_map])


# initial head outputs: 1% prior for probability maps, 1 m for depth
HEAD_BIAS_INIT = {"sigmoid": float(np.log(0.01 / 0.99)), "linear": 1.0}


def init_params(model: ModelGraph, seed: int = 0) -> ModelGraph:
    """Kaiming-uniform (fan-in) weights, in place.

    Hidden biases start at zero; the last layer's biases start at the head
    priors in ``HEAD_BIAS_INIT`` so the sparse maps begin near empty.
    """
    rng = np.random.default_rng(seed)
    for i in model.conv_indices():
        layer = model.layers[i]
        kh, kw = layer.kernel
        fan_in = layer.in_channels * kh * kw
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, (layer.out_channels, layer.in_channels, kh, kw))
        model.params[i] = (w.astype(np.float32), np.zeros(layer.out_channels, np.float32))
    last = model.conv_indices()[-1]
    bias = model.params[last][1]
    for c, kind in enumerate(model.head_activations[:len(bias)]):
        bias[c] = HEAD_BIAS_INIT[kind]
    return model


def build_reference_fcnn(seed: int = 0, mac_budget: int = DEFAULT_MAC_BUDGET) -> ModelGraph:
    """Five conv stages, 160x160x1 -> 20x20x3, 7,872,000 MACs."""
    layers = [
        conv(1, 8, stride=2), act("relu"),
        conv(8, 16, stride=2), act("relu"),
        conv(16, 32, stride=2), act("relu"),
        conv(32, 32), act("relu"),
        pointwise(32, 3),
    ]
    model = init_params(ModelGraph(layers, mac_budget=mac_budget), seed)
    model.validate()
    return model


def apply_heads(logits: np.ndarray, heads) -> np.ndarray:
    """Per-channel head activation over a (..., C, H, W) tensor."""
    out = np.empty_like(logits)
    for c, kind in enumerate(heads):
        out[..., c, :, :] = activation_forward(logits[..., c, :, :], kind)
    return out


def forward_batch(model: ModelGraph, x: np.ndarray, keep: bool = False):
    """Run (N, C, H, W) through the graph; returns maps, plus per-layer outputs if ``keep``."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(model.input_shape):
        raise ValueError(f"expected input (N, {model.input_shape}), got {x.shape}")
    outs = [x]
    for i, layer in enumerate(model.layers):
        if layer.is_conv:
            w, b = model.params[i]
            x = conv2d_forward(x, w, b, layer.stride, layer.padding)
        else:
            x = activation_forward(x, layer.activation)
        outs.append(x)
    y = apply_heads(x, model.head_activations)
    return (y, outs) if keep else y


def forward(model: ModelGraph, image: np.ndarray) -> OutputMaps:
    """Single 1x160x160 image (values in [0, 1]) to the three output maps."""
    image = np.asarray(image, dtype=np.float32)
    if image.shape == model.input_shape[1:]:
        image = image[None]
    if image.shape != tuple(model.input_shape):
        raise ValueError(f"expected image of shape {model.input_shape}, got {image.shape}")
    return OutputMaps.from_tensor(forward_batch(model, image[None])[0])


def normalize_image(pixels: np.ndarray) -> np.ndarray:
    """uint8 grayscale -> float32 in [0, 1], shaped (1, H, W)."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[None]
    return pixels.astype(np.float32) / 255.0
