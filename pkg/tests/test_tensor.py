import numpy as np
import pytest

from evflow.tensor import (DimensionError, GraphConsumedError, Tensor,
                           bilinear_sample, concat_channels, conv2d,
                           finite_diff_check, l1, matmul, no_grad,
                           slice_channels, softmax_rows)

from oracles import bilinear_oracle, conv2d_oracle, matmul_oracle


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        out = matmul(eye, eye)
        assert np.array_equal(out.data, np.eye(2))

    def test_hand_case(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        assert np.array_equal(matmul(a, b).data, [[3.0], [7.0]])

    def test_against_triple_loop(self, rng):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        out = matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(out - matmul_oracle(a, b))) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_1x1_doubling(self, rng):
        x = Tensor(rng.standard_normal((3, 5, 5)))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 2.0
        out = conv2d(x, Tensor(w))
        assert np.allclose(out.data, 2.0 * x.data)

    def test_zero_input_broadcasts_bias(self, rng):
        x = Tensor(np.zeros((2, 6, 6)))
        w = Tensor(rng.standard_normal((4, 2, 3, 3)))
        b = Tensor(rng.standard_normal(4))
        out = conv2d(x, w, b, padding=1)
        assert np.allclose(out.data, b.data[:, None, None] * np.ones((4, 6, 6)))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_against_six_loop_oracle(self, rng, stride, padding):
        x = rng.standard_normal((3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b),
                     stride=stride, padding=padding).data
        assert np.max(np.abs(out - conv2d_oracle(x, w, b, stride, padding))) < 1e-12

    def test_kernel_too_large(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 2)))
        w = Tensor(rng.standard_normal((1, 1, 5, 5)))
        with pytest.raises(DimensionError):
            conv2d(x, w)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            conv2d(Tensor(rng.standard_normal((2, 4, 4))),
                   Tensor(rng.standard_normal((1, 3, 3, 3))))


class TestBilinearSample:
    def test_grid_points_exact(self, rng):
        src = rng.standard_normal((2, 4, 5))
        gx, gy = np.meshgrid(np.arange(5.0), np.arange(4.0), indexing="xy")
        out = bilinear_sample(Tensor(src), Tensor(np.stack([gx, gy])))
        assert np.array_equal(out.data, src)

    def test_midpoint_between_rows(self):
        src = np.zeros((1, 2, 2))
        src[0, 1, 0] = 1.0  # value 1 one row below value 0, same column
        coords = np.asarray([[[0.0]], [[0.5]]])  # x=0, y=0.5
        out = bilinear_sample(Tensor(src), Tensor(coords))
        assert out.data[0, 0, 0] == 0.5

    def test_out_of_bounds_returns_zero(self, rng):
        src = Tensor(rng.standard_normal((3, 4, 4)) + 5.0)
        coords = Tensor(np.asarray([[[-0.001, 3.5]], [[1.0, 3.001]]]))
        out = bilinear_sample(src, coords)
        assert np.all(out.data[:, 0, 0] == 0.0)
        assert np.all(out.data[:, 0, 1] == 0.0)

    def test_against_closed_form_oracle(self, rng):
        src = rng.standard_normal((3, 6, 7))
        coords = np.stack([rng.uniform(-1, 7, (5, 4)), rng.uniform(-1, 6, (5, 4))])
        out = bilinear_sample(Tensor(src), Tensor(coords)).data
        assert np.max(np.abs(out - bilinear_oracle(src, coords))) < 1e-12


class TestSoftmaxRows:
    def test_constant_row_uniform(self):
        out = softmax_rows(Tensor(np.full((2, 4), 3.7)))
        assert np.allclose(out.data, 0.25)

    def test_zero_ln3(self):
        out = softmax_rows(Tensor(np.asarray([[0.0, np.log(3.0)]])))
        assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-15)

    def test_shift_invariance_bitwise(self):
        # dyadic entries survive the +1e6 shift exactly in float64
        row = np.asarray([[0.25, 1.75, -0.5, 0.0, 1.0]])
        out1 = softmax_rows(Tensor(row)).data
        out2 = softmax_rows(Tensor(row + 1e6)).data
        assert np.array_equal(out1, out2)

    def test_rows_sum_to_one(self, rng):
        out = softmax_rows(Tensor(rng.standard_normal((6, 9)) * 10))
        assert np.max(np.abs(out.data.sum(axis=1) - 1.0)) < 1e-9


class TestPointwise:
    def test_tanh_sigmoid_at_zero(self):
        z = Tensor(np.zeros((2, 2)))
        assert np.all(z.tanh().data == 0.0)
        assert np.all(z.sigmoid().data == 0.5)

    def test_concat_and_recover_by_slicing(self, rng):
        a = Tensor(rng.standard_normal((3, 4, 4)))
        b = Tensor(rng.standard_normal((5, 4, 4)))
        cat = concat_channels([a, b])
        assert cat.shape == (8, 4, 4)
        assert np.array_equal(slice_channels(cat, 0, 3).data, a.data)
        assert np.array_equal(slice_channels(cat, 3, 8).data, b.data)

    def test_concat_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            concat_channels([Tensor(rng.standard_normal((1, 2, 2))),
                             Tensor(rng.standard_normal((1, 3, 2)))])

    def test_l1_identical_is_zero(self, rng):
        a = rng.standard_normal((3, 3))
        assert l1(Tensor(a), Tensor(a)).item() == 0.0

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 2))) + Tensor(np.ones((2, 3)))


class TestGraph:
    def test_backward_twice_raises(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphConsumedError):
            loss.backward()

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.full((2,), 3.0), requires_grad=True)
        loss = (x * x).sum()  # d/dx = 2x
        loss.backward()
        assert np.allclose(x.grad, 6.0)

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert y._node is None and not y.requires_grad

    def test_forward_deterministic(self, rng):
        x = rng.standard_normal((4, 8, 8))
        w = rng.standard_normal((4, 4, 3, 3))
        out1 = conv2d(Tensor(x), Tensor(w), padding=1).relu().data
        out2 = conv2d(Tensor(x), Tensor(w), padding=1).relu().data
        assert np.array_equal(out1, out2)

    def test_finite_on_finite_inputs(self, rng):
        x = Tensor(rng.standard_normal((3, 6, 6)) * 100)
        w = Tensor(rng.standard_normal((2, 3, 3, 3)))
        out = conv2d(x, w, padding=1).tanh().sigmoid()
        assert np.all(np.isfinite(out.data))


class TestFiniteDiff:
    def test_matmul_gradients(self, rng):
        a = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        assert finite_diff_check(matmul, [a, b]) < 1e-6

    def test_softmax_gradients(self, rng):
        x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        assert finite_diff_check(softmax_rows, [x]) < 1e-6

    def test_conv2d_gradients(self, rng):
        x = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        fn = lambda x_, w_, b_: conv2d(x_, w_, b_, stride=2, padding=1)
        assert finite_diff_check(fn, [x, w, b]) < 1e-6

    def test_bilinear_gradients_both_inputs(self, rng):
        src = Tensor(rng.standard_normal((2, 5, 5)), requires_grad=True)
        coords = Tensor(np.stack([rng.uniform(0.3, 3.6, (3, 3)),
                                  rng.uniform(0.3, 3.6, (3, 3))]),
                        requires_grad=True)
        assert finite_diff_check(bilinear_sample, [src, coords]) < 1e-5
