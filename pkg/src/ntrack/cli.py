"""Command-line entry point: ``ntrack <subcommand> [--config FILE] [flags]``.

Every subcommand writes its artifacts plus a ``run.json`` provenance record
into the output directory. ``ntrack rerun out/run.json`` repeats a run from
that record alone.
"""

from __future__ import annotations

import argparse
import csv
from dataclasses import asdict
from importlib import metadata
import json
import logging
import math
from pathlib import Path
import platform
import sys

import numpy as np

from . import config as cfgmod
from .config import ConfigError, RunConfig

log = logging.getLogger("ntrack")

COMMANDS = ("render-dataset", "train", "quantize", "plan", "eval", "simulate")


class UsageError(Exception):
    """Bad arguments or inputs; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag name -> (config key, type, help)
COMMON_FLAGS = {
    "--seed": ("seed", int, "random seed"),
    "--out": ("out_dir", str, "output directory"),
}
FLAGS = {
    "render-dataset": {
        "--n": ("render.n", int, "number of frames"),
        "--depth-min": ("render.depth_min", float, "closest target distance [m]"),
        "--depth-max": ("render.depth_max", float, "farthest target distance [m]"),
        "--led-prob": ("render.led_prob", float, "probability the LED is on"),
    },
    "train": {
        "--dataset": ("dataset", str, "dataset root"),
        "--lr": ("train.lr", float, "learning rate"),
        "--epochs": ("train.epochs", int, "passes over the data"),
        "--batch-size": ("train.batch_size", int, "minibatch size"),
        "--weight-decay": ("train.weight_decay", float, "L2 penalty on weights"),
    },
    "quantize": {
        "--model": ("model", str, "float model file"),
        "--dataset": ("dataset", str, "calibration dataset root"),
        "--n-calib": ("quantize.n_calib", int, "calibration frames"),
    },
    "plan": {
        "--model": ("model", str, "model file, or 'ref' for the reference network"),
        "--l1": ("plan.l1_bytes", int, "L1 budget [B]"),
        "--l2": ("plan.l2_bytes", int, "L2 budget [B]"),
        "--efficiency": ("plan.efficiency", float, "MAC per cycle"),
        "--image-size": ("plan.image_size", int, "square input side [px]"),
    },
    "eval": {
        "--dataset": ("dataset", str, "dataset root with ground truth"),
        "--model": ("model", str, "model file to run"),
        "--predictions": ("predictions", str, "prediction JSONL instead of a model"),
    },
    "simulate": {
        "--model": ("model", str, "model file for learned perception"),
        "--trajectory": ("simulate.trajectory", str, "spiral, linear, circle or composite"),
        "--speed": ("simulate.speed", float, "target speed [m/s]"),
        "--duration": ("simulate.duration", float, "episode length [s]"),
        "--perception": ("simulate.perception", str, "oracle or model"),
    },
}
BOOL_FLAGS = {
    "train": {"--hflip": ("train.hflip", "random horizontal flips")},
    "eval": {"--int8": ("int8", "use the integer path of a quantized model")},
    "simulate": {"--int8": ("int8", "use the integer path of a quantized model")},
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ntrack", description="Drone-to-drone pose estimation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file (or a previous run.json)")
        for flag, (key, typ, hlp) in {**COMMON_FLAGS, **FLAGS[name]}.items():
            p.add_argument(flag, dest=key, type=typ, help=hlp)
        for flag, (key, hlp) in BOOL_FLAGS.get(name, {}).items():
            p.add_argument(flag, dest=key, action="store_const", const=True, help=hlp)
    p = sub.add_parser("rerun", help="repeat a run from its run.json")
    p.add_argument("record")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = cfgmod.load_config(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose")}
    return cfgmod.apply_overrides(cfg, overrides)


# ---------------------------------------------------------------- helpers

def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "Pillow"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def write_run_record(out: Path, command: str, cfg: RunConfig, outputs: list[str]) -> Path:
    record = {"command": command, "config": cfg.to_dict(), "config_sha256": cfg.digest(),
              "seed": cfg.seed, "versions": _versions(), "outputs": sorted(outputs)}
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _existing(path: str | None, what: str, command: str) -> Path:
    if not path:
        raise UsageError(f"{command}: no {what} given")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{command}: {what} {p} does not exist")
    return p


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _camera(cfg: RunConfig):
    from .sim.camera import CameraModel
    return CameraModel(focal_px=cfg.focal_px)


def _load(path: Path):
    from .modelio import ContainerError, load_model
    try:
        return load_model(path)
    except ContainerError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _perception_model(cfg: RunConfig, command: str):
    model, quantized = _load(_existing(cfg.model, "model", command))
    if cfg.int8:
        if quantized is None:
            raise UsageError(f"{command}: {cfg.model} has no quantized section")
        return quantized
    return model


# ---------------------------------------------------------------- commands

def cmd_render_dataset(cfg: RunConfig) -> int:
    from .dataset import write_dataset
    from .sim.datagen import generate_samples

    r = cfg.render
    if r.n < 0 or not 0 < r.depth_min < r.depth_max or not 0 <= r.led_prob <= 1:
        raise UsageError(f"render: invalid settings {asdict(r)}")
    out = _out_dir(cfg)
    images, anns = generate_samples(r.n, cfg.seed, _camera(cfg), (r.depth_min, r.depth_max),
                                    r.led_prob)
    write_dataset(out, ((k, images[k], anns[k]) for k in range(r.n)))
    write_run_record(out, "render-dataset", cfg, ["annotations.jsonl", "images/"])
    print(f"wrote {r.n} frames to {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    from .dataset import load_arrays
    from .model import build_reference_fcnn
    from .modelio import save_model
    from .train import HyperParams, train

    root = _existing(cfg.dataset, "dataset", "train")
    t = cfg.train
    if t.epochs < 1 or t.batch_size < 1 or not t.lr > 0 or t.map_loss not in ("bce", "mse"):
        raise UsageError(f"train: invalid settings {asdict(t)}")
    out = _out_dir(cfg)
    images, anns = load_arrays(root)
    hp = HyperParams(lr=t.lr, epochs=t.epochs, batch_size=t.batch_size, seed=cfg.seed,
                     momentum=t.momentum, hflip=t.hflip, lr_decay=t.lr_decay,
                     map_loss=t.map_loss, clip_norm=t.clip_norm, weight_decay=t.weight_decay)
    model, curve = train(build_reference_fcnn(cfg.seed), images, anns, hp)
    save_model(out / "model.ntrk", model)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows((k, f"{v:.8f}") for k, v in enumerate(curve))
    write_run_record(out, "train", cfg, ["model.ntrk", "loss.csv"])
    print(f"trained on {len(images)} frames, final loss {curve[-1]:.5f} -> {out / 'model.ntrk'}")
    return 0


def cmd_quantize(cfg: RunConfig) -> int:
    from .dataset import load_arrays
    from .modelio import save_model
    from .quant import calibrate

    model, _ = _load(_existing(cfg.model, "model", "quantize"))
    root = _existing(cfg.dataset, "dataset", "quantize")
    if cfg.quantize.n_calib < 1:
        raise UsageError("quantize: n_calib must be positive")
    out = _out_dir(cfg)
    images, _ = load_arrays(root)
    if len(images) == 0:
        raise UsageError(f"quantize: dataset {root} is empty")
    qm = calibrate(model, images[:cfg.quantize.n_calib])
    save_model(out / "model_int8.ntrk", model, qm)
    with open(out / "quant.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "w_scale", "in_scale", "in_zp", "out_scale", "out_zp",
                    "multiplier", "shift"])
        for i, ql in sorted(qm.layers.items()):
            w.writerow([i, f"{ql.w_qp.scale:.9g}", f"{ql.in_qp.scale:.9g}", ql.in_qp.zero_point,
                        f"{ql.out_qp.scale:.9g}", ql.out_qp.zero_point, ql.multiplier, ql.shift])
    write_run_record(out, "quantize", cfg, ["model_int8.ntrk", "quant.csv"])
    print(f"int8 parameters: {qm.param_bytes()} B -> {out / 'model_int8.ntrk'}")
    return 0


def cmd_plan(cfg: RunConfig) -> int:
    from .model import build_reference_fcnn
    from .planner import MemoryBudget, format_plan, plan_csv, plan_memory

    p = cfg.plan
    if p.l1_bytes < 1 or p.l2_bytes < 1 or not p.efficiency > 0 or p.image_size < 8:
        raise UsageError(f"plan: invalid settings {asdict(p)}")
    if cfg.model in (None, "ref"):
        model = build_reference_fcnn(cfg.seed)
    else:
        model, quantized = _load(_existing(cfg.model, "model", "plan"))
        model = quantized or model
    out = _out_dir(cfg)
    plan = plan_memory(model, MemoryBudget(p.l1_bytes, p.l2_bytes),
                       (1, p.image_size, p.image_size), p.efficiency)
    print(format_plan(plan))
    (out / "plan.csv").write_text(plan_csv(plan))
    write_run_record(out, "plan", cfg, ["plan.csv"])
    if not plan.feasible:
        print("plan infeasible: " + "; ".join(plan.errors), file=sys.stderr)
        return 2
    return 0


def _predict(model, images: np.ndarray) -> list:
    from .codec import decode
    from .model import ModelGraph, OutputMaps, forward_batch
    from .quant import int8_forward_batch

    preds = []
    for s in range(0, len(images), 64):
        chunk = images[s:s + 64]
        if isinstance(model, ModelGraph):
            y = forward_batch(model, (chunk.astype(np.float32) / 255.0)[:, None])
        else:
            y = int8_forward_batch(model, chunk)
        preds.extend(decode(OutputMaps.from_tensor(m)) for m in y)
    return preds


def cmd_eval(cfg: RunConfig) -> int:
    from .codec import DecodedPose
    from .dataset import load_arrays, load_dataset, load_predictions
    from .metrics import evaluate, histogram_svg

    root = _existing(cfg.dataset, "dataset", "eval")
    if (cfg.model is None) == (cfg.predictions is None):
        raise UsageError("eval: give exactly one of --model or --predictions")
    if cfg.predictions is not None:
        pred_path = _existing(cfg.predictions, "predictions file", "eval")
        model = None
    else:
        model = _perception_model(cfg, "eval")
    out = _out_dir(cfg)
    records = list(load_dataset(root))
    gt = np.array([(r.annotation.u, r.annotation.v, r.annotation.d) for r in records]).reshape(-1, 3)
    labels = np.array([r.annotation.led_on for r in records], bool)
    pred = np.full((len(records), 3), math.nan)
    scores = np.full(len(records), math.nan)
    outputs = ["report.csv", "histogram.svg"]
    if model is None:
        table = load_predictions(pred_path)
        for k, r in enumerate(records):
            if r.frame in table:
                ann, led = table[r.frame]
                pred[k] = (ann.u, ann.v, ann.d)
                scores[k] = led
    else:
        images, _ = load_arrays(root)
        lines = []
        for k, (r, p) in enumerate(zip(records, _predict(model, images))):
            if isinstance(p, DecodedPose):
                pred[k] = (p.u_hat, p.v_hat, p.d_hat)
                scores[k] = p.p_led
                lines.append(json.dumps({"frame": r.frame, "u": p.u_hat, "v": p.v_hat,
                                         "d": p.d_hat, "led": p.p_led}))
        (out / "predictions.jsonl").write_text("".join(line + "\n" for line in lines))
        outputs.append("predictions.jsonl")
    report = evaluate(pred, scores, gt, labels)
    (out / "report.csv").write_text(report.to_csv())
    (out / "histogram.svg").write_text(histogram_svg(report.histogram, report.median_px))
    write_run_record(out, "eval", cfg, outputs)
    print(report.format())
    if not report.ok:
        print("undefined metrics: " + ", ".join(report.undefined), file=sys.stderr)
        return 2
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    from .sim.episode import ModelPerception, OraclePerception, run_episode, trajectory_svg
    from .sim.trajectory import TrajectorySpec, make_trajectory

    s = cfg.simulate
    if s.perception not in ("oracle", "model"):
        raise UsageError(f"simulate: perception must be oracle or model, got {s.perception!r}")
    if not s.fps > 0 or not s.duration > 0:
        raise UsageError("simulate: fps and duration must be positive")
    try:
        spec = TrajectorySpec(s.trajectory, s.speed, s.duration)
    except ValueError as exc:
        raise UsageError(f"simulate: {exc}") from exc
    perception = ModelPerception(_perception_model(cfg, "simulate")) \
        if s.perception == "model" else OraclePerception()
    out = _out_dir(cfg)
    traj = make_trajectory(spec, 1.0 / s.fps)
    report = run_episode(traj, perception, cfg.seed, _camera(cfg),
                         window_start_s=s.window_start_s)
    (out / "trace.csv").write_text(report.trace_csv())
    trajectory_svg(report, out / "trajectory.svg")
    summary = report.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_run_record(out, "simulate", cfg, ["trace.csv", "trajectory.svg", "summary.json"])
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                   for k, v in summary.items()))
    return 0


HANDLERS = {"render-dataset": cmd_render_dataset, "train": cmd_train, "quantize": cmd_quantize,
            "plan": cmd_plan, "eval": cmd_eval, "simulate": cmd_simulate}


def _rerun(record_path: str):
    path = _existing(record_path, "run record", "rerun")
    try:
        command = json.loads(path.read_text())["command"]
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: not a run record ({exc})") from exc
    if command not in HANDLERS:
        raise UsageError(f"{path}: unknown command {command!r}")
    return command, cfgmod.load_config(path)


def main(argv=None) -> int:
    from .dataset import DatasetError

    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "rerun":
            command, cfg = _rerun(args.record)
        else:
            command, cfg = args.command, resolve_config(args)
        return HANDLERS[command](cfg)
    except (UsageError, ConfigError, DatasetError) as exc:
        print(f"ntrack: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure past validation
        log.debug("failure", exc_info=True)
        print(f"ntrack: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
