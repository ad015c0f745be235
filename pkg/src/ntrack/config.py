"""Run configuration: one TOML file, overridden by command-line flags."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class TrainSection:
    lr: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    momentum: float = 0.9
    lr_decay: float = 0.9
    hflip: bool = False
    weight_decay: float = 0.0
    map_loss: str = "bce"
    clip_norm: float = 5.0


@dataclass
class RenderSection:
    n: int = 2000
    depth_min: float = 0.4
    depth_max: float = 2.0
    led_prob: float = 0.5


@dataclass
class QuantizeSection:
    n_calib: int = 64


@dataclass
class PlanSection:
    l1_bytes: int = 64 * 1024
    l2_bytes: int = 512 * 1024
    efficiency: float = 2.2
    image_size: int = 160


@dataclass
class SimulateSection:
    trajectory: str = "spiral"
    speed: float = 0.21
    duration: float = 60.0
    perception: str = "oracle"
    window_start_s: float = 0.0
    fps: float = 39.0


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str | None = None
    model: str | None = None
    predictions: str | None = None
    out_dir: str = "out"
    int8: bool = False  # run the integer path of a quantized model
    focal_px: float = 126.0
    train: TrainSection = field(default_factory=TrainSection)
    render: RenderSection = field(default_factory=RenderSection)
    quantize: QuantizeSection = field(default_factory=QuantizeSection)
    plan: PlanSection = field(default_factory=PlanSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


SECTIONS = ("train", "render", "quantize", "plan", "simulate")


def _coerce(cls, name, value, where):
    expected = {f.name: f for f in fields(cls)}
    if name not in expected:
        raise ConfigError(f"unknown key {where}{name!r}")
    default = getattr(cls(), name)
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}{name} must be true/false, got {value!r}")
        return value
    try:
        return type(default)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}{name}: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            section = getattr(cfg, key)
            for k, v in value.items():
                setattr(section, k, _coerce(type(section), k, v, f"{key}."))
        else:
            setattr(cfg, key, _coerce(RunConfig, key, value, ""))
    return cfg


def load_config(path) -> RunConfig:
    """Read a TOML config, or the ``config`` block of a ``run.json`` record."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        if path.suffix == ".json":
            data = json.loads(text)
            data = data.get("config", data)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Set dotted keys (``train.lr``) or top-level keys; ``None`` values are skipped."""
    for key, value in overrides.items():
        if value is None:
            continue
        if "." in key:
            sec, name = key.split(".", 1)
            section = getattr(cfg, sec)
            setattr(section, name, _coerce(type(section), name, value, f"{sec}."))
        else:
            setattr(cfg, key, _coerce(RunConfig, key, value, ""))
    return cfg
