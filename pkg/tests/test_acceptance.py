"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from ntrack.codec import Annotation, DecodedPose, decode, synth_gt_maps
from ntrack.kernels import activation_backward, activation_forward, conv2d_backward, conv2d_forward
from ntrack.metrics import evaluate, pearson, r2_score, roc_auc
from ntrack.model import (DEFAULT_MAC_BUDGET, OutputMaps, build_reference_fcnn, forward_batch)
from ntrack.modelio import dumps
from ntrack.planner import (MAX_PERF, MIN_POWER, MemoryBudget, count_macs, estimate_rate_power,
                            format_plan, plan_memory, platform_power_w)
from ntrack.quant import calibrate, int8_forward_batch, int8_forward_codes
from ntrack.sim.datagen import generate_samples
from ntrack.sim.episode import ModelPerception, run_episode
from ntrack.sim.trajectory import TrajectorySpec, make_trajectory
from ntrack.train import HyperParams, composite_loss, train

from conftest import conv_oracle

SPEEDS = (0.21, 0.34, 0.59)


@pytest.fixture(scope="module")
def trained():
    """Reference net fit on 2,000 rendered frames; 500 held-out frames for evaluation."""
    train_x, train_a = generate_samples(2000, seed=1)
    test_x, test_a = generate_samples(500, seed=2)
    t0 = time.perf_counter()
    model, curve = train(build_reference_fcnn(seed=0), train_x, train_a, HyperParams(seed=0))
    return dict(model=model, curve=curve, seconds=time.perf_counter() - t0,
                train_x=train_x, test_x=test_x, test_a=test_a)


@pytest.fixture(scope="module")
def quantized(trained):
    return calibrate(trained["model"], trained["train_x"][:64])


def float_maps(model, pixels):
    return forward_batch(model, (pixels / 255.0).astype(np.float32)[:, None])


def decode_all(maps):
    return [decode(OutputMaps.from_tensor(m)) for m in maps]


def test_1_budget_arithmetic(verdict):
    ref = build_reference_fcnn()
    macs = count_macs(ref)
    with pytest.raises(ValueError):
        build_reference_fcnn(mac_budget=macs - 1)
    implied = 78.7e6 / 8.3
    cross = abs(4.4e6 * 2.2 - implied) / implied
    ok = macs == 7_872_000 and DEFAULT_MAC_BUDGET == 9_481_927 and cross <= 0.03
    verdict("1 budget arithmetic", ok, f"MACs {macs:,}, budget {DEFAULT_MAC_BUDGET:,}, "
            f"cross-check {cross:.2%}")


def test_2_throughput_model(verdict):
    fast = estimate_rate_power(4.4e6, MAX_PERF)
    slow = estimate_rate_power(4.4e6, MIN_POWER)
    table = format_plan(plan_memory(build_reference_fcnn()))
    platform = platform_power_w(fast.system_mw)
    ok = (round(fast.fps, 1) == 39.8 and abs(fast.fps - 39) / 39 <= 0.05
          and round(slow.fps, 2) == 5.68 and abs(slow.fps - 5.7) / 5.7 <= 0.02
          and (slow.soc_mw, fast.soc_mw, fast.system_mw) == (10.7, 100.8, 109.6)
          and all(s in table for s in ("10.7", "100.8", "109.6"))
          and abs(platform - 7.66) / 7.66 <= 0.01)
    verdict("2 throughput model", ok, f"{fast.fps:.2f} fps @175 MHz, {slow.fps:.3f} fps @25 MHz, "
            f"platform {platform:.3f} W")


def test_3_memory_feasibility(verdict):
    ref = build_reference_fcnn()
    calib, _ = generate_samples(32, seed=5)
    plan = plan_memory(calibrate(ref, calib), MemoryBudget())
    expected = {"params": 15_508, "images": 51_200, "activations": 102_400, "code": 40_960}
    ok = (plan.feasible and plan.l2 == expected and plan.l2_total == 210_068
          and plan.l2_total < 512 * 1024
          and all(layer.l1_bytes <= 64 * 1024 for layer in plan.layers if layer.l1_bytes))
    worst = max(layer.l1_bytes or 0 for layer in plan.layers)
    verdict("3 memory feasibility", ok, f"L2 {plan.l2_total:,} B, worst L1 tile {worst:,} B")


def _random_conv_case(rng):
    c_in, c_out = rng.integers(1, 5, 2)
    k = int(rng.choice([1, 3, 5]))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
    size = int(rng.integers(k, 12))
    x = rng.standard_normal((c_in, size, size)).astype(np.float32)
    w = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
    b = rng.standard_normal(c_out).astype(np.float32)
    return x, w, b, stride, padding


def _central_difference(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f()
        x[idx] = old - eps
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def _grad_close(analytic, numeric):
    return np.allclose(analytic, numeric, rtol=1e-3, atol=1e-3 * max(np.abs(numeric).max(), 1e-12))


def test_4_kernel_correctness(verdict):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    forward_ok = True
    for _ in range(200):
        x, w, b, stride, padding = _random_conv_case(rng)
        want = conv_oracle(x, w, b, stride, padding)
        got = conv2d_forward(x, w, b, stride, padding)
        forward_ok &= got.shape == want.shape and np.allclose(
            got, want, rtol=1e-5, atol=1e-5 * np.abs(want).max())

    grads_ok = True
    for _ in range(10):
        x, w, b, stride, padding = (a.astype(np.float64) if isinstance(a, np.ndarray) else a
                                    for a in _random_conv_case(rng))
        up = rng.standard_normal(conv2d_forward(x, w, b, stride, padding).shape)
        loss = lambda: float(np.sum(conv2d_forward(x, w, b, stride, padding) * up))  # noqa: E731
        for analytic, param in zip(conv2d_backward(x, w, up, stride, padding), (x, w, b)):
            grads_ok &= _grad_close(analytic, _central_difference(loss, param))
    for kind in ("relu", "sigmoid", "linear"):
        z = rng.standard_normal(40)
        z = z[np.abs(z) > 1e-3]
        up = rng.standard_normal(z.shape)
        loss = lambda: float(np.sum(activation_forward(z, kind) * up))  # noqa: E731
        grads_ok &= _grad_close(activation_backward(activation_forward(z, kind), up, kind),
                                _central_difference(loss, z))
    pred = rng.uniform(0.05, 0.95, (2, 3, 20, 20))
    gt = np.stack([synth_gt_maps(Annotation(60.0 + 20 * k, 70.0, 1.1, True)).to_tensor()
                   for k in range(2)])
    for map_loss in ("bce", "mse"):
        _, g = composite_loss(pred, gt, map_loss)
        grads_ok &= _grad_close(g, _central_difference(lambda: composite_loss(pred, gt, map_loss)[0],
                                                       pred))
    seconds = time.perf_counter() - t0
    verdict("4 kernel correctness", forward_ok and grads_ok and seconds < 60,
            f"forward {forward_ok}, gradients {grads_ok}, {seconds:.1f} s")


def test_5_quantization_fidelity(verdict, trained, quantized):
    t0 = time.perf_counter()
    frames = trained["test_x"][:100]
    ref = float_maps(trained["model"], frames)
    q = int8_forward_batch(quantized, frames)
    diff = np.abs(ref - q)
    led_max, pos_max = float(diff[:, 0].max()), float(diff[:, 2].max())
    pairs = [(a, b) for a, b in zip(decode_all(ref), decode_all(q))
             if isinstance(a, DecodedPose) and isinstance(b, DecodedPose)]
    du = np.median([abs(a.u_hat - b.u_hat) for a, b in pairs])
    dv = np.median([abs(a.v_hat - b.v_hat) for a, b in pairs])
    dd = np.median([abs(a.d_hat - b.d_hat) for a, b in pairs])
    seconds = time.perf_counter() - t0
    ok = (max(led_max, pos_max) <= 0.05 and du <= 1 and dv <= 1 and dd <= 0.05
          and len(pairs) >= 95 and seconds < 60)
    verdict("5 quantization fidelity", ok,
            f"map max |diff| LED {led_max:.3f} position {pos_max:.3f}; median |du| {du:.3f} px "
            f"|dv| {dv:.3f} px |dd| {dd:.4f} m over {len(pairs)} frames")


def test_6_codec_round_trip(verdict):
    worst_uv = worst_d = worst_oracle = 0.0
    cells = 8 * np.arange(20) + 4.0
    for u in np.linspace(4, 156, 33):
        for v in np.linspace(4, 156, 33):
            d = 0.4 + (u + v) / 200
            maps = synth_gt_maps(Annotation(u, v, d, True))
            out = decode(maps)
            worst_uv = max(worst_uv, abs(out.u_hat - u), abs(out.v_hat - v))
            worst_d = max(worst_d, abs(out.d_hat - d))
            p = maps.position_map.astype(np.float64)
            mass = p.sum()
            brute = (sum(p[i, j] * cells[j] for i in range(20) for j in range(20)) / mass,
                     sum(p[i, j] * cells[i] for i in range(20) for j in range(20)) / mass,
                     sum(p[i, j] * maps.depth_map[i, j] for i in range(20) for j in range(20)) / mass,
                     sum(p[i, j] * maps.led_map[i, j] for i in range(20) for j in range(20)) / mass)
            got = (out.u_hat, out.v_hat, out.d_hat, out.p_led)
            worst_oracle = max(worst_oracle, *(abs(a - b) for a, b in zip(got, brute)))
    ok = worst_uv <= 0.75 and worst_d <= 1e-6 and worst_oracle <= 1e-9
    verdict("6 codec round trip", ok, f"worst uv {worst_uv:.3f} px, depth {worst_d:.1e} m, "
            f"oracle gap {worst_oracle:.1e}")


def test_7_metrics(verdict):
    rng = np.random.default_rng(7)
    checks = [abs(r2_score([1, 2, 3], [1, 2, 4]) - 0.785714) <= 1e-6]
    gt = rng.standard_normal(50)
    checks.append(r2_score(np.full(50, gt.mean()), gt) == pytest.approx(0.0, abs=1e-12))
    pred = gt + rng.standard_normal(50)
    checks.append(pearson(3.5 * pred - 2.0, gt) == pytest.approx(pearson(pred, gt), abs=1e-12))
    for _ in range(300):
        n = int(rng.integers(2, 201))
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        scores = rng.integers(0, 10, n) / 10.0
        pos, neg = scores[labels], scores[~labels]
        oracle = (np.sum(pos[:, None] > neg[None]) + 0.5 * np.sum(pos[:, None] == neg[None])) \
            / (len(pos) * len(neg))
        checks.append(abs(roc_auc(scores, labels) - oracle) <= 1e-12)
    labels = np.array([0, 0, 1, 1], bool)
    checks.append(roc_auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0)
    checks.append(roc_auc([0.9, 0.8, 0.2, 0.1], labels) == 0.0)
    verdict("7 metrics", all(checks), f"{sum(checks)}/{len(checks)} checks")


def test_8_desk_scale_learning(verdict, trained):
    preds = decode_all(float_maps(trained["model"], trained["test_x"]))
    uvd = np.array([(p.u_hat, p.v_hat, p.d_hat) if isinstance(p, DecodedPose) else (math.nan,) * 3
                    for p in preds])
    led = np.array([p.p_led if isinstance(p, DecodedPose) else math.nan for p in preds])
    gt = np.array([(a.u, a.v, a.d) for a in trained["test_a"]])
    labels = np.array([a.led_on for a in trained["test_a"]])
    report = evaluate(uvd, led, gt, labels)
    ok = (report.median_px <= 3 and report.r2["d"] >= 0.8 and report.auc >= 0.95
          and trained["seconds"] <= 15 * 60)
    verdict("8 desk-scale learning", ok,
            f"median {report.median_px:.2f} px, R2(d) {report.r2['d']:.3f}, AUC {report.auc:.3f}, "
            f"missed {report.missed}, trained in {trained['seconds']:.0f} s")


def test_9_closed_loop(verdict, trained):
    t0 = time.perf_counter()
    oracle = run_episode(make_trajectory(TrajectorySpec("spiral", 0.21, duration=60.0)), seed=9)
    perception = ModelPerception(trained["model"])
    learned = [run_episode(make_trajectory(TrajectorySpec("spiral", v, duration=60.0)),
                           perception, seed=9) for v in SPEEDS]
    endurance = run_episode(make_trajectory(TrajectorySpec("composite", 0.21, duration=240.0)),
                            seed=9)
    seconds = time.perf_counter() - t0
    norms = [r.avg_error_norm for r in learned]
    ok = (np.all(oracle.avg_abs_error < 0.05)
          and all(r.completed and np.all(r.avg_abs_error < 0.15) for r in learned)
          and endurance.completed and endurance.steps == len(endurance.trace)
          and norms[0] <= norms[1] <= norms[2] and seconds <= 300)
    worst = max(float(r.avg_abs_error.max()) for r in learned)
    verdict("9 closed loop", ok,
            f"oracle {np.round(oracle.avg_abs_error, 3).tolist()} m; model worst axis {worst:.3f} m, "
            f"|p-pd| {' <= '.join(f'{n:.3f}' for n in norms)}; endurance "
            f"{'completed' if endurance.completed else 'diverged'}; {seconds:.0f} s")


def test_10_determinism(verdict):
    images, anns = generate_samples(96, seed=10)
    hp = HyperParams(epochs=2, batch_size=16, seed=3)

    def pipeline():
        model, _ = train(build_reference_fcnn(seed=1), images, anns, hp)
        qm = calibrate(model, images[:32])
        traj = make_trajectory(TrajectorySpec("spiral", 0.34, duration=3.0))
        trace = run_episode(traj, ModelPerception(model), seed=4).trace_csv()
        return dumps(model, qm), trace, int8_forward_codes(qm, images[:16]).tobytes()

    first, second = pipeline(), pipeline()
    same = [a == b for a, b in zip(first, second)]
    verdict("10 determinism", all(same),
            f"model file {same[0]}, episode trace {same[1]}, int8 outputs {same[2]}")


# properties of the trained model that sit outside the numbered criteria

def test_trained_depth_head_is_nonnegative(trained):
    maps = float_maps(trained["model"], trained["test_x"][:100])
    assert np.mean(maps[:, 1] >= -0.05) >= 0.99


def test_int8_depth_map_tracks_float(trained, quantized):
    frames = trained["test_x"][100:200]
    depth = float_maps(trained["model"], frames)[:, 1]
    worst = float(np.abs(depth - int8_forward_batch(quantized, frames)[:, 1]).max())
    assert worst <= 0.1, f"depth map max |diff| {worst:.3f} m"
