"""Static deployment analysis for a GAP8-class SoC.

Reproduces the deployment arithmetic: MAC count, cycles at a fixed MAC/cycle
efficiency, frame rate and power per operating point, L2 residency and
row-tiled L1 feasibility with double-buffered transfers. Nothing is
executed; every figure is derived from layer shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io
import math

MAC_PER_CYCLE = 2.2
# share of the whole drone's power drawn by camera + memory + SoC
PLATFORM_POWER_SHARE = 0.0143
RUNTIME_CODE_BYTES = 40 * 1024
BIAS_BYTES = 4


@dataclass(frozen=True)
class MemoryBudget:
    l1_bytes: int = 64 * 1024
    l2_bytes: int = 512 * 1024

    def __post_init__(self):
        if self.l1_bytes <= 0 or self.l2_bytes <= 0:
            raise ValueError("memory budgets must be positive")


@dataclass(frozen=True)
class OperatingPoint:
    name: str
    cl_freq_hz: float
    soc_power_mw: float
    system_overhead_mw: float | None = None
    fc_freq_hz: float | None = None
    vdd: float | None = None

    def __post_init__(self):
        if not self.cl_freq_hz > 0:
            raise ValueError(f"{self.name}: cluster frequency must be positive")

    @property
    def system_power_mw(self) -> float | None:
        if self.system_overhead_mw is None:
            return None
        return self.soc_power_mw + self.system_overhead_mw


# measured figures: 10.7 mW SoC at 25 MHz, 100.8 mW at 175 MHz, 109.6 mW with camera + memory
MIN_POWER = OperatingPoint("min-power", 25e6, 10.7, None, 25e6, 1.0)
MAX_PERF = OperatingPoint("max-performance", 175e6, 100.8, 8.8, 250e6, 1.2)
OPERATING_POINTS = (MIN_POWER, MAX_PERF)


@dataclass(frozen=True)
class RatePower:
    point: str
    fps: float
    soc_mw: float
    system_mw: float | None

    @property
    def energy_per_frame_mj(self) -> float:
        return self.soc_mw / self.fps

    @property
    def platform_power_w(self) -> float | None:
        return None if self.system_mw is None else platform_power_w(self.system_mw)


@dataclass
class LayerPlan:
    index: int
    name: str
    macs: int
    cycles: int
    tile_rows: int | None
    tile_shape: tuple[int, int, int] | None
    l1_bytes: int | None
    feasible: bool


@dataclass
class DeployPlan:
    layers: list[LayerPlan]
    l2: dict[str, int]
    budget: MemoryBudget
    total_macs: int
    total_cycles: int
    rates: dict[str, RatePower] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def l2_total(self) -> int:
        return sum(self.l2.values())

    @property
    def feasible(self) -> bool:
        return not self.errors


class InfeasiblePlan(ValueError):
    pass


def _graph(model):
    # a QuantizedModel plans over its float source's layer list
    return getattr(model, "float_model", model)


def _layers_and_shapes(model, input_shape=None):
    graph = _graph(model)
    return graph.layers, graph.shapes(input_shape)


def count_macs(model, input_shape=None) -> int:
    layers, shapes = _layers_and_shapes(model, input_shape)
    return sum(layer.macs(shapes[i]) for i, layer in enumerate(layers))


def param_bytes(model) -> int:
    """int8 weights plus int32 biases."""
    total = 0
    for layer in _graph(model).layers:
        if layer.is_conv:
            kh, kw = layer.kernel
            total += layer.out_channels * layer.in_channels * kh * kw
            total += BIAS_BYTES * layer.out_channels
    return total


def estimate_cycles(macs, efficiency: float = MAC_PER_CYCLE) -> int:
    """ceil(MACs / efficiency); ``macs`` may be a model or a count."""
    if not efficiency > 0:
        raise ValueError(f"efficiency must be positive, got {efficiency}")
    if not isinstance(macs, (int, float)):
        macs = count_macs(macs)
    # tolerate float noise in e.g. 9.68e6 / 2.2
    q = macs / efficiency
    return int(math.ceil(q - 1e-9 * max(q, 1.0)))


def estimate_rate_power(cycles: float, point: OperatingPoint) -> RatePower:
    if not cycles > 0:
        raise ValueError("cycles must be positive")
    return RatePower(point.name, point.cl_freq_hz / cycles, point.soc_power_mw, point.system_power_mw)


def platform_power_w(system_mw: float, share: float = PLATFORM_POWER_SHARE) -> float:
    """Whole-drone power implied by the SoC subsystem drawing ``share`` of it."""
    return system_mw / share / 1000.0


def activation_bytes(shape) -> int:
    c, h, w = shape
    return c * h * w


def peak_consecutive_activations(model, input_shape=None) -> int:
    """Largest input+output byte pair over consecutive buffers of the layer list."""
    _, shapes = _layers_and_shapes(model, input_shape)
    return max(activation_bytes(a) + activation_bytes(b) for a, b in zip(shapes, shapes[1:]))


def l2_usage(model, input_shape=None, runtime_code_bytes: int = RUNTIME_CODE_BYTES) -> dict[str, int]:
    _, shapes = _layers_and_shapes(model, input_shape)
    return {
        "params": param_bytes(model),
        "images": 2 * activation_bytes(shapes[0]),
        "activations": peak_consecutive_activations(model, input_shape),
        "code": runtime_code_bytes,
    }


def tile_bytes(layer, in_shape, tile_rows: int) -> tuple[int, tuple[int, int, int]]:
    """Double-buffered L1 bytes for a full-width output tile of ``tile_rows`` rows."""
    c_in, h, w = in_shape
    c_out, ho, wo = layer.output_shape(in_shape)
    kh, kw = layer.kernel
    in_rows = min((tile_rows - 1) * layer.stride + kh, h + 2 * layer.padding)
    inp = c_in * in_rows * (w + 2 * layer.padding)
    weights = c_out * c_in * kh * kw + BIAS_BYTES * c_out
    out = c_out * tile_rows * wo
    return 2 * (inp + weights + out), (c_out, tile_rows, wo)


def tile_layer(layer, in_shape, l1_bytes: int):
    """Tallest output tile that fits in L1, or None if even one row does not."""
    _, ho, _ = layer.output_shape(in_shape)
    for rows in range(ho, 0, -1):
        nbytes, shape = tile_bytes(layer, in_shape, rows)
        if nbytes <= l1_bytes:
            return rows, shape, nbytes
    return None


def layer_name(index: int, layer) -> str:
    kh, kw = layer.kernel
    return f"L{index}:{layer.kind}{kh}x{kw}/s{layer.stride} {layer.in_channels}->{layer.out_channels}"


def plan_memory(model, budget: MemoryBudget = MemoryBudget(), input_shape=None,
                efficiency: float = MAC_PER_CYCLE, points=OPERATING_POINTS,
                runtime_code_bytes: int = RUNTIME_CODE_BYTES) -> DeployPlan:
    """Place everything in L2 and tile each conv layer for L1.

    Activation layers are fused into the preceding conv and get no tile of
    their own. Infeasibilities are collected in ``plan.errors``; the first
    entry names the first layer that cannot be tiled.
    """
    layers, shapes = _layers_and_shapes(model, input_shape)
    plans, errors = [], []
    for i, layer in enumerate(layers):
        if not layer.is_conv:
            continue
        macs = layer.macs(shapes[i])
        cycles = estimate_cycles(macs, efficiency)
        name = layer_name(i, layer)
        fit = tile_layer(layer, shapes[i], budget.l1_bytes)
        if fit is None:
            need, _ = tile_bytes(layer, shapes[i], 1)
            errors.append(f"{name}: a single output row needs {need} B of L1 "
                          f"(double-buffered), budget is {budget.l1_bytes} B")
            plans.append(LayerPlan(i, name, macs, cycles, None, None, None, False))
        else:
            rows, shape, nbytes = fit
            plans.append(LayerPlan(i, name, macs, cycles, rows, shape, nbytes, True))
    l2 = l2_usage(model, input_shape, runtime_code_bytes)
    if sum(l2.values()) > budget.l2_bytes:
        detail = ", ".join(f"{k} {v}" for k, v in l2.items())
        errors.append(f"L2: {sum(l2.values())} B ({detail}) exceeds {budget.l2_bytes} B")
    total_macs = count_macs(model, input_shape)
    total_cycles = estimate_cycles(total_macs, efficiency)
    rates = {p.name: estimate_rate_power(total_cycles, p) for p in points}
    return DeployPlan(plans, l2, budget, total_macs, total_cycles, rates, errors)


def require_feasible(plan: DeployPlan) -> DeployPlan:
    if not plan.feasible:
        raise InfeasiblePlan("; ".join(plan.errors))
    return plan


def plan_csv(plan: DeployPlan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "macs", "tile", "l1_bytes", "cycles"])
    for lp in plan.layers:
        tile = "x".join(map(str, lp.tile_shape)) if lp.tile_shape else "infeasible"
        w.writerow([lp.name, lp.macs, tile, "" if lp.l1_bytes is None else lp.l1_bytes, lp.cycles])
    return buf.getvalue()


def format_plan(plan: DeployPlan) -> str:
    lines = [f"{'layer':<34}{'MACs':>11}{'tile':>12}{'L1 B':>8}{'cycles':>11}"]
    for lp in plan.layers:
        tile = "x".join(map(str, lp.tile_shape)) if lp.tile_shape else "-"
        l1 = "-" if lp.l1_bytes is None else str(lp.l1_bytes)
        lines.append(f"{lp.name:<34}{lp.macs:>11,}{tile:>12}{l1:>8}{lp.cycles:>11,}")
    lines.append(f"{'total':<34}{plan.total_macs:>11,}{'':>12}{'':>8}{plan.total_cycles:>11,}")
    lines.append("")
    lines.append("L2: " + ", ".join(f"{k} {v:,} B" for k, v in plan.l2.items())
                 + f" = {plan.l2_total:,} / {plan.budget.l2_bytes:,} B")
    for r in plan.rates.values():
        sys_mw = "n/a" if r.system_mw is None else f"{r.system_mw:.1f} mW"
        lines.append(f"{r.point:<16} {r.fps:7.2f} fps  SoC {r.soc_mw:.1f} mW  system {sys_mw}"
                     f"  {r.energy_per_frame_mj:.3f} mJ/frame")
    lines.append("feasible" if plan.feasible else "INFEASIBLE: " + "; ".join(plan.errors))
    return "\n".join(lines)
