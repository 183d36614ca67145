"""Sequence loss and the desk-scale trainer.

Supervision follows the iterative-refinement convention: every iteration's
prediction is penalized by its masked mean L1 distance to ground truth,
weighted by gamma^(n-j) so later iterations dominate. The optimizer is
plain gradient descent with momentum and global-norm clipping; everything
is deterministic for a fixed seed.
"""

from __future__ import annotations

import os

import numpy as np

from .config import RunConfig
from .model import FlowModel
from .tensor import Tensor, no_grad


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the step and last diagnostics."""


def sequence_loss(predictions, flow_gt, valid, gamma) -> Tensor:
    """sum_j gamma^(n-j) * mean_{valid}(|pred_j - gt|_1), as a graph scalar.

    The per-pixel error is |du| + |dv|; the mean runs over valid pixels
    only (invalid pixels are multiplied by zero before the reduction, so
    their ground-truth values cannot affect the loss).
    """
    n = len(predictions)
    if n < 1:
        raise ValueError("sequence_loss: need at least one prediction")
    if not (0.0 < gamma <= 1.0):
        raise ValueError("sequence_loss: gamma must be in (0, 1]")
    valid = np.asarray(valid)
    n_valid = int(np.count_nonzero(valid))
    if n_valid == 0:
        raise ValueError("sequence_loss: empty valid mask")
    dtype = predictions[0].dtype
    gt = Tensor(np.asarray(flow_gt, dtype=dtype))
    mask = Tensor(np.broadcast_to(valid, gt.shape).astype(dtype).copy())

    total = None
    for j, pred in enumerate(predictions, start=1):
        if pred.shape != gt.shape:
            raise ValueError(
                f"sequence_loss: prediction {j} shape {pred.shape} != gt {gt.shape}")
        err = ((pred - gt).abs() * mask).sum() * (1.0 / n_valid)
        term = err * float(gamma ** (n - j))
        total = term if total is None else total + term
    return total


def _clip_scale(params, clip_norm):
    sq = 0.0
    for t in params.values():
        if t.grad is not None:
            sq += float(np.sum(t.grad.astype(np.float64) ** 2))
    gnorm = np.sqrt(sq)
    if clip_norm and gnorm > clip_norm:
        return gnorm, clip_norm / gnorm
    return gnorm, 1.0


class SgdMomentum:
    """v <- momentum*v + g; p <- p - lr*v, after global-norm clipping."""

    def __init__(self, params, lr, momentum=0.9, clip_norm=1.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self):
        gnorm, scale = _clip_scale(self.params, self.clip_norm)
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad * scale
            t.data = t.data - self.lr * v
        return gnorm


class Adam:
    """Adam with global-norm clipping; per-parameter adaptive step sizes."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        gnorm, scale = _clip_scale(self.params, self.clip_norm)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return gnorm


def make_optimizer(params, cfg):
    if cfg.optimizer == "sgd":
        return SgdMomentum(params, lr=cfg.lr, momentum=cfg.momentum,
                           clip_norm=cfg.clip_norm)
    if cfg.optimizer == "adam":
        return Adam(params, lr=cfg.lr, clip_norm=cfg.clip_norm)
    raise ValueError(f"unknown optimizer: {cfg.optimizer!r}")


def mean_epe(model: FlowModel, samples, iters=None):
    """Mean last-iteration endpoint error over a sample list (no grads)."""
    from .metrics import epe  # local import: metrics also imports nothing from here

    total = 0.0
    with no_grad():
        for s in samples:
            pred = model.forward(s["inputs"], iters=iters)[-1].data
            total += epe(pred, s["flow_gt"], s["valid"])
    return total / len(samples)


def train(model: FlowModel, samples, cfg: RunConfig, out_dir=None, val_samples=None,
          log=None):
    """Run cfg.steps of batched SGD; returns {"losses", "val"} history.

    Writes `loss.csv` (step,loss), optional `val.csv` (step,epe), periodic
    `ckpt_<step>` checkpoints, and a final `model.ckpt` when out_dir is
    given. Sample order is a seeded permutation rebuilt each epoch, and
    gradient accumulation order inside a batch is fixed, so runs are
    bit-reproducible for a given seed.
    """
    if not samples:
        raise ValueError("train: dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model.params, cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        loss_fh = open(os.path.join(out_dir, "loss.csv"), "w")
        loss_fh.write("step,loss\n")
        val_fh = None
        if val_samples:
            val_fh = open(os.path.join(out_dir, "val.csv"), "w")
            val_fh.write("step,epe\n")
    else:
        loss_fh = val_fh = None

    losses = []
    val_history = []
    order = []
    try:
        for step in range(cfg.steps):
            batch_loss = 0.0
            model.zero_grad()
            accum = None
            for _ in range(cfg.batch):
                if not order:
                    order = list(rng.permutation(len(samples)))
                s = samples[order.pop(0)]
                preds = model.forward(s["inputs"])
                loss = sequence_loss(preds, s["flow_gt"], s["valid"],
                                     model.config.gamma) * (1.0 / cfg.batch)
                loss.backward()
                batch_loss += loss.item()
            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss {batch_loss} at step {step} "
                    f"(lr={cfg.lr}, clip={cfg.clip_norm})")
            opt.step()
            losses.append(batch_loss)
            if loss_fh:
                loss_fh.write(f"{step},{batch_loss:.6g}\n")
                loss_fh.flush()
            if log and (step % 100 == 0 or step == cfg.steps - 1):
                log(f"step {step}: loss {batch_loss:.4f}")

            if val_samples and cfg.val_every and (step + 1) % cfg.val_every == 0:
                v = mean_epe(model, val_samples)
                val_history.append((step + 1, v))
                if val_fh:
                    val_fh.write(f"{step + 1},{v:.6g}\n")
                    val_fh.flush()
                if log:
                    log(f"step {step + 1}: val epe {v:.4f}")
            if out_dir and cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0 \
                    and step + 1 < cfg.steps:
                model.save(os.path.join(out_dir, f"ckpt_{step + 1:06d}"))
    finally:
        if loss_fh:
            loss_fh.close()
        if val_fh:
            val_fh.close()
    if out_dir:
        model.save(os.path.join(out_dir, "model.ckpt"))
    return {"losses": losses, "val": val_history}
