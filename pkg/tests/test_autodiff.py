"""Tensor engine tests: values against hand arithmetic, grads against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralgraph import autodiff as ad

from helpers import check_grad, finite_diff_grad, rel_err


class TestElementwiseValues:
    def test_add(self):
        out = ad.elementwise("add", ad.Tensor([1.0, 2.0]), ad.Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_relu(self):
        out = ad.elementwise("relu", ad.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_broadcasting_trailing_dims(self):
        out = ad.elementwise("mul", ad.Tensor(np.ones((2, 3))), ad.Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            ad.elementwise("add", ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            ad.elementwise("cosh", ad.Tensor([1.0]))


class TestElementwiseGrads:
    def test_tanh_grad_matches_central_difference(self):
        x = ad.Tensor(np.array(0.5), requires_grad=True)
        ad.backward(ad.tanh(x))
        fd = finite_diff_grad(lambda v: float(np.tanh(v)), np.array(0.5))
        assert rel_err(x.grad, fd) < 1e-6

    @pytest.mark.parametrize(
        "op", ["relu", "gelu", "tanh", "sigmoid", "leaky_relu", "sin", "exp", "neg"]
    )
    def test_unary_grads(self, op):
        rng = ad.Rng(11)
        x = rng.normal(size=(3, 4)) + 0.05  # nudge off relu kinks
        err = check_grad(
            lambda p: ad.rsum(ad.elementwise(op, ad.mul(p["x"], p["x"]))), {"x": x}
        )
        assert err < 1e-4

    def test_log_grad(self):
        x = np.abs(ad.Rng(3).normal(size=(5,))) + 0.5
        err = check_grad(lambda p: ad.rsum(ad.log(p["x"])), {"x": x})
        assert err < 1e-4

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
    def test_binary_grads_with_broadcast(self, op):
        rng = ad.Rng(17)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4,)) + 2.0
        err = check_grad(
            lambda p: ad.rsum(ad.elementwise(op, p["a"], p["b"])), {"a": a, "b": b}
        )
        assert err < 1e-4


class TestMatmul:
    def test_identity(self):
        x = ad.Rng(5).normal(size=(3, 3))
        out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_arithmetic(self):
        out = ad.matmul(ad.Tensor([[1.0, 2.0], [3.0, 4.0]]), ad.Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ValueError, match="inner"):
            ad.matmul(ad.Tensor(np.ones((4, 5))), ad.Tensor(np.ones((4, 3))))

    def test_grad_check(self):
        rng = ad.Rng(7)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        err = check_grad(lambda p: ad.rsum(ad.matmul(p["a"], p["b"])), {"a": a, "b": b})
        assert err < 1e-4


class TestReduce:
    def test_sum(self):
        assert ad.reduce("sum", ad.Tensor([1.0, 2.0, 3.0])).item() == 6.0

    def test_std_constant_vector_is_tiny_not_nan(self):
        out = ad.reduce("std", ad.Tensor([2.0, 2.0, 2.0]))
        assert np.isfinite(out.data)
        assert abs(out.item()) <= 2e-4  # sqrt(eps) floor, not NaN

    def test_std_constant_grad_finite(self):
        x = ad.Tensor([2.0, 2.0, 2.0], requires_grad=True)
        ad.backward(ad.rstd(x))
        assert np.all(np.isfinite(x.grad))

    def test_mean_grad_is_quarter(self):
        x = ad.Tensor(np.arange(4.0), requires_grad=True)
        ad.backward(ad.rmean(x))
        np.testing.assert_allclose(x.grad, 0.25)

    def test_max_first_argmax_wins(self):
        x = ad.Tensor([1.0, 3.0, 3.0, 2.0], requires_grad=True)
        ad.backward(ad.rmax(x))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError, match="axis"):
            ad.reduce("sum", ad.Tensor(np.ones((2, 2))), axis=5)

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError, match="zero extent"):
            ad.reduce("sum", ad.Tensor(np.ones((2, 0))), axis=1)

    @pytest.mark.parametrize("op", ["sum", "mean", "max", "std"])
    @pytest.mark.parametrize("axis", [None, 0, 1])
    def test_reduce_grads(self, op, axis):
        x = ad.Rng(23).normal(size=(3, 4))  # distinct entries so max has no ties
        err = check_grad(
            lambda p: ad.rsum(ad.reduce(op, p["x"], axis=axis)), {"x": x}
        )
        assert err < 1e-4


class TestBackward:
    def test_square(self):
        x = ad.Tensor(np.array(3.0), requires_grad=True)
        ad.backward(ad.mul(x, x))
        np.testing.assert_allclose(x.grad, 6.0)

    def test_composite_mlp_against_finite_differences(self):
        rng = ad.Rng(42)
        params = {
            "w1": rng.normal(size=(4, 6), scale=0.7),
            "b1": rng.normal(size=(6,), scale=0.3),
            "w2": rng.normal(size=(6, 2), scale=0.7),
            "b2": rng.normal(size=(2,), scale=0.3),
        }
        x = rng.normal(size=(5, 4))

        def loss(p):
            h = ad.tanh(ad.add(ad.matmul(ad.Tensor(x), p["w1"]), p["b1"]))
            out = ad.add(ad.matmul(h, p["w2"]), p["b2"])
            return ad.rmean(ad.mul(out, out))

        assert check_grad(loss, params) < 1e-4

    def test_non_scalar_loss_rejected(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.mul(x, x))

    def test_double_backward_errors(self):
        x = ad.Tensor(np.array(2.0), requires_grad=True)
        loss = ad.mul(x, x)
        ad.backward(loss)
        with pytest.raises(RuntimeError, match="consumed"):
            ad.backward(loss)

    def test_grad_accumulates_across_shared_use(self):
        x = ad.Tensor(np.array(2.0), requires_grad=True)
        ad.backward(ad.add(ad.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
        np.testing.assert_allclose(x.grad, 5.0)


class TestIndexingOps:
    def test_gather_scatter_grads(self):
        x = ad.Rng(9).normal(size=(5, 3))
        idx = np.array([0, 2, 2, 4])
        err = check_grad(lambda p: ad.rsum(ad.gather_rows(p["x"], idx)), {"x": x})
        assert err < 1e-4

    def test_segment_sum_values_and_grad(self):
        v = ad.Tensor(np.array([[1.0], [2.0], [4.0]]), requires_grad=True)
        out = ad.segment_sum(v, np.array([0, 0, 1]), 3)
        np.testing.assert_array_equal(out.data, [[3.0], [4.0], [0.0]])
        ad.backward(ad.rsum(ad.mul(out, out)))
        np.testing.assert_allclose(v.grad, [[6.0], [6.0], [8.0]])

    def test_segment_mean_empty_segment_is_zero(self):
        out = ad.segment_mean(ad.Tensor([[2.0], [4.0]]), np.array([1, 1]), 3)
        np.testing.assert_array_equal(out.data, [[0.0], [3.0], [0.0]])

    def test_segment_max_grad_first_wins(self):
        v = ad.Tensor(np.array([[1.0, 5.0], [1.0, 5.0], [3.0, 0.0]]), requires_grad=True)
        out = ad.segment_max(v, np.array([0, 0, 1]), 2)
        np.testing.assert_array_equal(out.data, [[1.0, 5.0], [3.0, 0.0]])
        ad.backward(ad.rsum(out))
        np.testing.assert_array_equal(v.grad, [[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])

    def test_concat_grad(self):
        rng = ad.Rng(31)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
        err = check_grad(
            lambda p: ad.rsum(ad.mul(ad.concat([p["a"], p["b"]], axis=1),
                                     ad.concat([p["a"], p["b"]], axis=1))),
            {"a": a, "b": b},
        )
        assert err < 1e-4


class TestConvPool:
    def test_conv2d_matches_direct_computation(self):
        rng = ad.Rng(13)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        out = ad.conv2d(ad.Tensor(x), ad.Tensor(w)).data
        # direct loop oracle at one location
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        want = np.sum(xp[1, :, 2:5, 1:4] * w[2])
        np.testing.assert_allclose(out[1, 2, 2, 1], want, rtol=1e-12)

    def test_conv2d_grads(self):
        rng = ad.Rng(14)
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=(3,))
        err = check_grad(
            lambda p: ad.rsum(ad.relu(ad.conv2d(p["x"], p["w"], p["b"]))),
            {"x": x, "w": w, "b": b},
        )
        assert err < 1e-4

    def test_avg_pool_and_grad(self):
        x = ad.Rng(15).normal(size=(1, 2, 4, 4))
        err = check_grad(lambda p: ad.rsum(ad.avg_pool2d(p["x"])), {"x": x})
        assert err < 1e-4

    def test_softmax_rows_sum_to_one(self):
        x = ad.Rng(16).normal(size=(3, 5))
        out = ad.softmax(ad.Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm_grad(self):
        rng = ad.Rng(18)
        x = rng.normal(size=(3, 6))
        g = rng.normal(size=(6,)) + 1.0
        b = rng.normal(size=(6,))
        err = check_grad(
            lambda p: ad.rsum(ad.layer_norm(p["x"], p["g"], p["b"])),
            {"x": x, "g": g, "b": b},
        )
        assert err < 1e-4


class TestRng:
    def test_same_seed_same_stream(self):
        a = ad.Rng(99).normal(size=8)
        b = ad.Rng(99).normal(size=8)
        np.testing.assert_array_equal(a, b)

    def test_derived_streams_differ_and_reproduce(self):
        root = ad.Rng(7)
        d1 = root.derive(0).uniform(size=4)
        d2 = root.derive(1).uniform(size=4)
        assert not np.array_equal(d1, d2)
        np.testing.assert_array_equal(d1, ad.Rng(7).derive(0).uniform(size=4))

    def test_determinism_of_op_sequence(self):
        def run():
            rng = ad.Rng(1234)
            x = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            y = ad.rsum(ad.tanh(ad.matmul(x, x)))
            ad.backward(y)
            return y.data.copy(), x.grad.copy()

        y1, g1 = run()
        y2, g2 = run()
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_array_equal(g1, g2)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=4),
    st.sampled_from(["add", "sub", "mul"]),
)
def test_binary_ops_match_numpy_property(rows, cols, op):
    rng = ad.Rng(rows * 101 + cols * 13)
    a = rng.normal(size=(rows, cols))
    b = rng.normal(size=(rows, cols))
    got = ad.elementwise(op, ad.Tensor(a), ad.Tensor(b)).data
    want = {"add": a + b, "sub": a - b, "mul": a * b}[op]
    np.testing.assert_array_equal(got, want)
