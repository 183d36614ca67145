"""Finite-difference verification suite, callable from the CLI and tests.

Each differentiable operation is checked at a random double-precision
point (nonsmooth ops are sampled away from their kinks), and the whole
one-iteration network is checked end to end against central differences on
a 16-element weight slice. Returns per-check records so callers can render
them or assert on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .model import FlowModel
from .synth import gen_scene
from .tensor import (Tensor, bilinear_sample, concat_channels, conv2d,
                     finite_diff_check, matmul, no_grad, slice_channels,
                     softmax_rows)
from .train import sequence_loss

OP_BOUND = 1e-5
E2E_BOUND = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    bound: float

    @property
    def passed(self):
        return self.max_rel_error < self.bound


def _t(rng, *shape, away_from_zero=None):
    data = rng.standard_normal(shape)
    if away_from_zero is not None:
        data = np.where(np.abs(data) < away_from_zero,
                        np.sign(data) * away_from_zero + data, data)
    return Tensor(data, requires_grad=True)


def op_checks(seed=0):
    """Finite-difference checks for every differentiable op."""
    rng = np.random.default_rng(seed)
    checks = []

    def run(name, fn, inputs, h=1e-4):
        checks.append(CheckResult(name, finite_diff_check(fn, inputs, h=h), OP_BOUND))

    run("matmul", matmul, [_t(rng, 4, 4), _t(rng, 4, 4)])
    run("add", lambda a, b: a + b, [_t(rng, 3, 5), _t(rng, 3, 5)])
    run("mul", lambda a, b: a * b, [_t(rng, 3, 5), _t(rng, 3, 5)])
    run("relu", lambda a: a.relu(), [_t(rng, 4, 6, away_from_zero=1e-2)])
    run("tanh", lambda a: a.tanh(), [_t(rng, 4, 6)])
    run("sigmoid", lambda a: a.sigmoid(), [_t(rng, 4, 6)])
    run("abs", lambda a: a.abs(), [_t(rng, 4, 6, away_from_zero=1e-2)])
    run("mean", lambda a: a.mean(), [_t(rng, 4, 6)])
    run("softmax_rows", softmax_rows, [_t(rng, 3, 5)])
    run("concat_channels", lambda a, b: concat_channels([a, b]),
        [_t(rng, 2, 4, 4), _t(rng, 3, 4, 4)])
    run("slice_channels", lambda a: slice_channels(a, 1, 3), [_t(rng, 4, 3, 3)])
    run("conv2d", lambda x, w, b: conv2d(x, w, b, stride=2, padding=1),
        [_t(rng, 3, 8, 8), _t(rng, 4, 3, 3, 3), _t(rng, 4)])

    # sampling positions kept away from integer coordinates (interp kinks)
    src = _t(rng, 2, 6, 6)
    coords = Tensor(np.stack([rng.uniform(0.3, 4.7, (5, 5)),
                              rng.uniform(0.3, 4.7, (5, 5))]), requires_grad=True)
    coords.data += np.where(np.abs(coords.data - np.round(coords.data)) < 0.05,
                            0.1, 0.0)
    run("bilinear_sample", bilinear_sample, [src, coords])

    from .correlation import corr_matrix
    run("corr_matrix", corr_matrix, [_t(rng, 3, 2, 3), _t(rng, 3, 2, 3)])

    lookup_flow = np.random.default_rng(seed + 1).standard_normal((2, 2, 3)) * 0.4

    def corr_then_lookup(f1, f2):
        from .correlation import build_guide_corr, lookup
        return lookup(build_guide_corr(f1, f2), lookup_flow, radius=1)

    run("lookup", corr_then_lookup, [_t(rng, 3, 2, 3), _t(rng, 3, 2, 3)])
    return checks


def network_gradient_check(seed=0, size=16, n_weights=16, h=1e-4):
    """End-to-end central-difference check for one refinement iteration.

    Compares analytic gradients of the sequence loss with numeric ones,
    over a slice of GRU gate weights, on a size x size synthetic sample.
    """
    cfg = ModelConfig(d_corr=8, d_ctx=8, d_motion=8, d_hidden=8, radius=2,
                      n_targets=2, bins=4, bins_seg=2, iters=1)
    model = FlowModel(cfg, seed=seed, dtype=np.float64)
    sample = gen_scene(seed, size, size, max_disp=2.0, n_targets=cfg.n_targets)
    inputs = model.prepare_inputs(sample.image0, sample.image1, sample.events,
                                  sample.t_k, sample.t_k1)

    def loss_value():
        preds = model.forward(inputs, iters=1)
        return sequence_loss(preds, sample.flow_gt, sample.valid, cfg.gamma)

    loss = loss_value()
    loss.backward()
    target = model.params["gru.z.w"]
    analytic = target.grad.reshape(-1)[:n_weights].copy()
    model.zero_grad()

    worst = 0.0
    flat = target.data.reshape(-1)
    for k in range(n_weights):
        orig = flat[k]
        flat[k] = orig + h
        with no_grad():
            f_plus = loss_value().item()
        flat[k] = orig - h
        with no_grad():
            f_minus = loss_value().item()
        flat[k] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        err = abs(analytic[k] - numeric) / max(1.0, abs(analytic[k]))
        worst = max(worst, err)
    return CheckResult("network_one_iteration", worst, E2E_BOUND)


def gradient_coverage(seed=0, size=16):
    """Every parameter group must receive a nonzero gradient."""
    model = FlowModel(ModelConfig(), seed=seed, dtype=np.float64)
    sample = gen_scene(seed + 7, size, size, max_disp=2.0)
    inputs = model.prepare_inputs(sample.image0, sample.image1, sample.events,
                                  sample.t_k, sample.t_k1)
    preds = model.forward(inputs, iters=2)
    loss = sequence_loss(preds, sample.flow_gt, sample.valid, model.config.gamma)
    loss.backward()
    norms = {}
    for gname, tensors in model.param_groups().items():
        norms[gname] = float(np.sqrt(sum(
            np.sum(t.grad.astype(np.float64) ** 2)
            for t in tensors if t.grad is not None)))
    return norms


def run_suite(scale="tiny", log=print):
    """Full verification pass; returns True when every check holds."""
    seed = 0 if scale == "tiny" else 1
    results = op_checks(seed=seed)
    results.append(network_gradient_check(seed=seed))
    ok = True
    for res in results:
        status = "pass" if res.passed else "FAIL"
        log(f"[{status}] {res.name}: max rel error {res.max_rel_error:.3g} "
            f"(bound {res.bound:g})")
        ok = ok and res.passed
    norms = gradient_coverage(seed=seed)
    for gname, norm in norms.items():
        status = "pass" if norm > 0 else "FAIL"
        log(f"[{status}] gradient flows to {gname}: |g| = {norm:.3g}")
        ok = ok and norm > 0
    return ok
