import numpy as np
import pytest

from evflow.config import ModelConfig
from evflow.model import FlowModel, upsample_flow
from evflow.synth import gen_scene
from evflow.tensor import Tensor
from evflow.train import sequence_loss

TINY = ModelConfig(d_corr=8, d_ctx=8, d_motion=8, d_hidden=8, radius=2,
                   n_targets=2, bins=4, bins_seg=2, iters=2)


@pytest.fixture(scope="module")
def tiny_model():
    return FlowModel(TINY, seed=0, dtype=np.float64)


@pytest.fixture(scope="module")
def tiny_sample(tiny_model):
    s = gen_scene(11, 16, 16, max_disp=2.0, contrast=0.08, n_targets=2)
    inputs = tiny_model.prepare_inputs(s.image0, s.image1, s.events, s.t_k, s.t_k1)
    return s, inputs


class TestInitState:
    def test_zero_context_hidden_is_tanh_bias(self, tiny_model):
        ctx = Tensor(np.zeros((8, 2, 2)))
        hidden, flow = tiny_model.init_state(ctx)
        bias = tiny_model.state_init[1].data
        assert np.allclose(hidden.data,
                           np.tanh(bias)[:, None, None] * np.ones((8, 2, 2)))

    def test_flow_starts_exactly_zero(self, tiny_model):
        _, flow = tiny_model.init_state(Tensor(np.zeros((8, 2, 2))))
        assert flow.shape == (2, 2, 2) and not flow.any()

    def test_deterministic(self, tiny_model, rng):
        ctx = Tensor(rng.standard_normal((8, 3, 3)))
        h1, _ = tiny_model.init_state(ctx)
        h2, _ = tiny_model.init_state(ctx)
        assert np.array_equal(h1.data, h2.data)


class TestGruStep:
    def test_closed_update_gate_keeps_state(self, rng):
        model = FlowModel(TINY, seed=1, dtype=np.float64)
        model.gru_z[0].data = np.zeros_like(model.gru_z[0].data)
        model.gru_z[1].data = np.full_like(model.gru_z[1].data, -800.0)  # z == 0
        h = Tensor(rng.standard_normal((8, 2, 2)))
        out = model.gru_step(h, Tensor(rng.standard_normal((8, 2, 2))),
                             Tensor(rng.standard_normal((8, 2, 2))))
        assert np.array_equal(out.data, h.data)

    def test_open_update_gate_takes_candidate(self, rng):
        model = FlowModel(TINY, seed=1, dtype=np.float64)
        model.gru_z[0].data = np.zeros_like(model.gru_z[0].data)
        model.gru_z[1].data = np.full_like(model.gru_z[1].data, 800.0)  # z == 1
        h = Tensor(rng.standard_normal((8, 2, 2)))
        motion = Tensor(rng.standard_normal((8, 2, 2)))
        ctx = Tensor(rng.standard_normal((8, 2, 2)))
        out = model.gru_step(h, motion, ctx)

        from oracles import conv2d_oracle
        x = np.concatenate([motion.data, ctx.data], axis=0)
        hx = np.concatenate([h.data, x], axis=0)
        r = 1 / (1 + np.exp(-conv2d_oracle(hx, model.gru_r[0].data,
                                           model.gru_r[1].data, padding=1)))
        rhx = np.concatenate([r * h.data, x], axis=0)
        h_tilde = np.tanh(conv2d_oracle(rhx, model.gru_h[0].data,
                                        model.gru_h[1].data, padding=1))
        assert np.max(np.abs(out.data - h_tilde)) < 1e-12

    def test_random_step_matches_gate_formula_oracle(self, rng):
        model = FlowModel(TINY, seed=2, dtype=np.float64)
        h = rng.standard_normal((8, 3, 3))
        motion = rng.standard_normal((8, 3, 3))
        ctx = rng.standard_normal((8, 3, 3))
        out = model.gru_step(Tensor(h), Tensor(motion), Tensor(ctx)).data

        from oracles import conv2d_oracle
        sig = lambda a: 1 / (1 + np.exp(-a))
        x = np.concatenate([motion, ctx], axis=0)
        hx = np.concatenate([h, x], axis=0)
        z = sig(conv2d_oracle(hx, model.gru_z[0].data, model.gru_z[1].data, padding=1))
        r = sig(conv2d_oracle(hx, model.gru_r[0].data, model.gru_r[1].data, padding=1))
        rhx = np.concatenate([r * h, x], axis=0)
        h_tilde = np.tanh(conv2d_oracle(rhx, model.gru_h[0].data,
                                        model.gru_h[1].data, padding=1))
        assert np.max(np.abs(out - ((1 - z) * h + z * h_tilde))) < 1e-12


class TestFlowDelta:
    def test_zero_head_weights_accumulate_bias(self, tiny_sample):
        model = FlowModel(TINY, seed=3, dtype=np.float64)
        model.head1[0].data = np.zeros_like(model.head1[0].data)
        model.head1[1].data = np.zeros_like(model.head1[1].data)
        model.head2[0].data = np.zeros_like(model.head2[0].data)
        bias = model.head2[1].data
        _, inputs = tiny_sample
        preds = model.forward(inputs, iters=3)
        for k, pred in enumerate(preds, start=1):
            expect = k * bias * TINY.stride  # upsampled constant field
            assert np.allclose(pred.data[0], expect[0], atol=1e-12)
            assert np.allclose(pred.data[1], expect[1], atol=1e-12)

    def test_delta_shape(self, tiny_model, rng):
        delta = tiny_model.flow_delta(Tensor(rng.standard_normal((8, 2, 2))))
        assert delta.shape == (2, 2, 2)


class TestUpsampleFlow:
    def test_constant_field_scales(self):
        flow = np.zeros((2, 4, 4))
        flow[0] = 1.0
        up = upsample_flow(Tensor(flow), 8)
        assert up.shape == (2, 32, 32)
        assert np.allclose(up.data[0], 8.0) and np.allclose(up.data[1], 0.0)

    def test_zero_flow_stays_zero(self):
        up = upsample_flow(Tensor(np.zeros((2, 2, 2))), 8)
        assert not up.data.any()

    def test_against_bilinear_oracle(self, rng):
        from oracles import bilinear_oracle
        flow = rng.standard_normal((2, 3, 4))
        s = 4
        up = upsample_flow(Tensor(flow), s).data
        ys = np.clip((np.arange(12) + 0.5) / s - 0.5, 0, 2)
        xs = np.clip((np.arange(16) + 0.5) / s - 0.5, 0, 3)
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        expect = bilinear_oracle(flow, np.stack([gx, gy])) * s
        assert np.max(np.abs(up - expect)) < 1e-12


class TestForwardPass:
    def test_iters_below_one_rejected(self, tiny_model, tiny_sample):
        _, inputs = tiny_sample
        with pytest.raises(ValueError):
            tiny_model.forward(inputs, iters=0)

    def test_prediction_list_length(self, tiny_model, tiny_sample):
        _, inputs = tiny_sample
        assert len(tiny_model.forward(inputs, iters=4)) == 4

    def test_bitwise_deterministic(self, tiny_model, tiny_sample):
        _, inputs = tiny_sample
        p1 = tiny_model.forward(inputs, iters=2)
        p2 = tiny_model.forward(inputs, iters=2)
        for a, b in zip(p1, p2):
            assert np.array_equal(a.data, b.data)

    def test_full_resolution_output(self, tiny_model, tiny_sample):
        _, inputs = tiny_sample
        preds = tiny_model.forward(inputs, iters=1)
        assert preds[0].shape == (2, 16, 16)

    def test_lazy_corr_matches_dense_at_inference(self, tiny_model, tiny_sample):
        from evflow.tensor import no_grad
        _, inputs = tiny_sample
        with no_grad():
            dense = tiny_model.forward(inputs, iters=2)
            lazy = tiny_model.forward(inputs, iters=2, lazy_corr=True)
        for a, b in zip(dense, lazy):
            assert np.array_equal(a.data, b.data)


class TestParameterPlumbing:
    def test_manifest_stable_across_runs(self):
        m1 = FlowModel(TINY, seed=9, dtype=np.float64)
        m2 = FlowModel(TINY, seed=9, dtype=np.float64)
        assert m1.parameter_manifest() == m2.parameter_manifest()
        for name in m1.params:
            assert np.array_equal(m1.params[name].data, m2.params[name].data)

    def test_guide_encoder_weight_sharing_audit(self, tiny_model):
        # both guidance stacks must route through the same parameter objects
        names = [n for n in tiny_model.params if n.startswith("guide_enc")]
        assert names  # present
        total = len(tiny_model.params)
        by_prefix = len({n.split(".")[0] for n in tiny_model.params})
        assert total == len(set(tiny_model.params))  # no duplicates
        assert by_prefix < total

    def test_checkpoint_roundtrip_through_model(self, tmp_path, tiny_sample):
        model = FlowModel(TINY, seed=4, dtype=np.float64)
        _, inputs = tiny_sample
        before = model.forward(inputs, iters=1)[0].data
        path = tmp_path / "m.ckpt"
        model.save(path)
        other = FlowModel(TINY, seed=5, dtype=np.float64)
        other.load(path)
        after = other.forward(inputs, iters=1)[0].data
        # float32 checkpoint quantization, so close but not bitwise
        assert np.max(np.abs(before - after)) < 1e-5

    def test_gradient_reaches_every_group(self, tiny_model, tiny_sample):
        sample, inputs = tiny_sample
        tiny_model.zero_grad()
        preds = tiny_model.forward(inputs, iters=2)
        loss = sequence_loss(preds, sample.flow_gt, sample.valid, TINY.gamma)
        loss.backward()
        for gname, tensors in tiny_model.param_groups().items():
            norm = np.sqrt(sum(float(np.sum(t.grad ** 2))
                               for t in tensors if t.grad is not None))
            assert norm > 0, f"no gradient in group {gname}"
        tiny_model.zero_grad()

    def test_head_weight_gradient_matches_finite_differences(self, tiny_sample):
        from evflow.tensor import no_grad
        model = FlowModel(TINY, seed=6, dtype=np.float64)
        sample, inputs = tiny_sample

        def loss_value():
            preds = model.forward(inputs, iters=1)
            return sequence_loss(preds, sample.flow_gt, sample.valid, TINY.gamma)

        loss = loss_value()
        loss.backward()
        target = model.params["head.conv2.w"]
        analytic = target.grad.reshape(-1)[:8].copy()
        model.zero_grad()
        h = 1e-4
        flat = target.data.reshape(-1)
        for k in range(8):
            orig = flat[k]
            flat[k] = orig + h
            with no_grad():
                fp = loss_value().item()
            flat[k] = orig - h
            with no_grad():
                fm = loss_value().item()
            flat[k] = orig
            numeric = (fp - fm) / (2 * h)
            assert abs(analytic[k] - numeric) / max(1.0, abs(analytic[k])) < 1e-6
