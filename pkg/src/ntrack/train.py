"""Desk-scale training of a :class:`ModelGraph` with SGD + momentum."""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from scipy.special import xlogy

from .codec import synth_gt_maps
from .kernels import activation_backward, conv2d_backward
from .model import DEPTH, LED, POSITION, ModelGraph, forward_batch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class HyperParams:
    lr: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.9
    hflip: bool = False
    lr_decay: float = 0.9  # multiplicative, applied after every epoch
    map_loss: str = "bce"  # "bce" or "mse" on the sigmoid-headed maps
    clip_norm: float = 5.0  # global gradient-norm clip, 0 disables
    weight_decay: float = 0.0  # L2 on conv weights (not biases)


def gt_tensor(annotations) -> np.ndarray:
    """Stack ground-truth maps as an (N, 3, 20, 20) float32 array."""
    return np.stack([synth_gt_maps(a).to_tensor() for a in annotations]).astype(np.float32)


def composite_loss(pred: np.ndarray, gt: np.ndarray, map_loss: str = "bce"
                   ) -> tuple[float, np.ndarray]:
    """Per-image map loss on LED and position plus depth MSE masked to GT position mass.

    The LED and position terms are summed over the 400 cells of each image
    and averaged over the batch; with ``"bce"`` the soft targets' entropy is
    subtracted, so a perfect fit scores 0; the depth term is the mean over masked
    cells. Returns the loss and its gradient w.r.t. ``pred`` (post-activation).
    """
    n = pred.shape[0]
    grad = np.zeros_like(pred)
    total = 0.0
    for c in (LED, POSITION):
        p, t = pred[:, c], gt[:, c]
        if map_loss == "mse":
            total += np.sum((p - t) ** 2) / n
            grad[:, c] = 2 * (p - t) / n
        elif map_loss == "bce":
            q = np.clip(p, 1e-7, 1 - 1e-7)
            # cross-entropy minus the target's own entropy: zero at p == t
            total += np.sum(xlogy(t, t) + xlogy(1 - t, 1 - t)
                            - t * np.log(q) - (1 - t) * np.log1p(-q)) / n
            grad[:, c] = (q - t) / (q * (1 - q)) / n
        else:
            raise ValueError(f"unknown map loss {map_loss!r}")
    mask = gt[:, POSITION] > 0
    count = max(int(mask.sum()), 1)
    diff = (pred[:, DEPTH] - gt[:, DEPTH]) * mask
    total += np.sum(diff ** 2) / count
    grad[:, DEPTH] = 2 * diff / count
    return float(total), grad


def backward(model: ModelGraph, outs: list[np.ndarray], pred: np.ndarray,
             grad_pred: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients, given the per-layer outputs kept by ``forward_batch``."""
    g = np.empty_like(grad_pred)
    for c, kind in enumerate(model.head_activations):
        g[:, c] = activation_backward(pred[:, c], grad_pred[:, c], kind)
    grads = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.is_conv:
            w, _ = model.params[i]
            g, gw, gb = conv2d_backward(outs[i], w, g, layer.stride, layer.padding)
            grads[i] = (gw, gb)
        else:
            g = activation_backward(outs[i + 1], g, layer.activation)
    return grads


def loss_and_grads(model: ModelGraph, x: np.ndarray, gt: np.ndarray, map_loss: str = "bce"):
    pred, outs = forward_batch(model, x, keep=True)
    loss, grad_pred = composite_loss(pred, gt, map_loss)
    return loss, backward(model, outs, pred, grad_pred)


def train(model: ModelGraph, images: np.ndarray, annotations, hp: HyperParams = HyperParams(),
          gt: np.ndarray | None = None, steps: int | None = None):
    """Fit ``model`` in place on uint8 images; returns (model, per-step loss curve).

    ``steps`` caps the number of optimizer steps (otherwise ``hp.epochs``
    full passes). Non-finite losses abort with :class:`TrainingError`.
    """
    n = len(images)
    if n == 0:
        raise TrainingError("cannot train on an empty dataset")
    x_all = (np.asarray(images, np.float32) / 255.0)[:, None]
    gt_all = gt_tensor(annotations) if gt is None else gt
    rng = np.random.default_rng(hp.seed)
    velocity = {i: (np.zeros_like(w), np.zeros_like(b)) for i, (w, b) in model.params.items()}
    curve = []
    lr = hp.lr
    total = steps if steps is not None else hp.epochs * -(-n // hp.batch_size)
    step = 0
    while step < total:
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            if step >= total:
                break
            idx = order[start:start + hp.batch_size]
            x, g = x_all[idx], gt_all[idx]
            if hp.hflip:
                flip = rng.random(len(idx)) < 0.5
                x = np.where(flip[:, None, None, None], x[..., ::-1], x)
                g = np.where(flip[:, None, None, None], g[..., ::-1], g)
            loss, grads = loss_and_grads(model, x, g, hp.map_loss)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at step {step} (lr={lr})")
            curve.append(loss)
            if hp.clip_norm > 0:
                norm = np.sqrt(sum(float(np.sum(gw.astype(np.float64) ** 2) + np.sum(gb ** 2.0))
                                   for gw, gb in grads.values()))
                if norm > hp.clip_norm:
                    grads = {i: (gw * (hp.clip_norm / norm), gb * (hp.clip_norm / norm))
                             for i, (gw, gb) in grads.items()}
            for i, (gw, gb) in grads.items():
                w, b = model.params[i]
                vw, vb = velocity[i]
                if hp.weight_decay:
                    gw = gw + hp.weight_decay * w
                vw *= hp.momentum
                vw -= lr * gw.astype(np.float32)
                vb *= hp.momentum
                vb -= lr * gb.astype(np.float32)
                w += vw
                b += vb
            step += 1
        lr *= hp.lr_decay
        log.info("step %d/%d loss %.5f", step, total, curve[-1])
    return model, np.array(curve)
