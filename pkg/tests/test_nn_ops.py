import numpy as np
import pytest

from crosstouch import kernels
from crosstouch.nn import NumericsError, Tensor, gradcheck, ops
from crosstouch.nn.modules import Conv2d, GroupNorm, Linear

RNG = np.random.default_rng(42)


def _t(shape, requires_grad=True, positive=False, offset=0.0):
    data = RNG.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data + offset, requires_grad=requires_grad)


def _proj(shape):
    return Tensor(RNG.standard_normal(shape))


def _check(fn, tensors, tol=1e-6):
    err = gradcheck.check_gradients(fn, tensors)
    assert err < tol, f"gradient rel error {err:.3e} >= {tol}"


class TestOpGradients:
    """Every differentiable op against f64 central differences (h=1e-5)."""

    def test_add_broadcast(self):
        a, b = _t((2, 3, 4, 4)), _t((1, 3, 1, 1))
        p = _proj((2, 3, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.add(a, b), p)), [a, b])

    def test_sub_mul_div(self):
        a, b = _t((2, 3, 4, 4)), _t((2, 3, 4, 4), positive=True)
        p = _proj((2, 3, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.sub(a, b), p)), [a, b])
        _check(lambda: ops.tsum(ops.mul(ops.mul(a, b), p)), [a, b])
        _check(lambda: ops.tsum(ops.mul(ops.div(a, b), p)), [a, b])

    def test_unary_ops(self):
        cases = [
            (ops.neg, {}), (ops.square, {}), (ops.exp, {}),
            (ops.sigmoid, {}), (ops.silu, {}), (ops.softplus, {}),
        ]
        for fn, _ in cases:
            x = _t((2, 3, 4, 4))
            p = _proj((2, 3, 4, 4))
            _check(lambda fn=fn, x=x, p=p: ops.tsum(ops.mul(fn(x), p)), [x])

    def test_positive_domain_ops(self):
        x = _t((2, 3, 4, 4), positive=True)
        p = _proj((2, 3, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.log(x), p)), [x])
        _check(lambda: ops.tsum(ops.mul(ops.sqrt(x), p)), [x])

    def test_relu_away_from_kink(self):
        x = Tensor(np.where(RNG.standard_normal((2, 3, 4, 4)) > 0, 1.0, -1.0)
                   + 0.2 * RNG.standard_normal((2, 3, 4, 4)), requires_grad=True)
        p = _proj((2, 3, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.relu(x), p)), [x])

    def test_clamp_interior(self):
        x = _t((2, 3, 4, 4))
        p = _proj((2, 3, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.clamp(x, -10.0, 10.0), p)), [x])

    def test_reductions(self):
        x = _t((2, 3, 4, 4))
        p = _proj((2, 3))
        _check(lambda: ops.tsum(ops.square(x)), [x])
        _check(lambda: ops.tsum(ops.mul(ops.tmean(x, axis=(2, 3)), p)), [x])
        _check(lambda: ops.tmean(ops.square(x)), [x])

    def test_reshape_permute_concat(self):
        x, y = _t((2, 3, 4, 4)), _t((2, 2, 4, 4))
        p = _proj((2, 5, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.concat([x, y], axis=1), p)), [x, y])
        p2 = _proj((2, 4, 4, 3))
        _check(lambda: ops.tsum(ops.mul(ops.permute(x, (0, 2, 3, 1)), p2)), [x])
        p3 = _proj((6, 16))
        _check(lambda: ops.tsum(ops.mul(ops.reshape(x, (6, 16)), p3)), [x])

    def test_linear(self):
        x, w, b = _t((4, 7)), _t((7, 5)), _t((5,))
        p = _proj((4, 5))
        _check(lambda: ops.tsum(ops.mul(ops.linear(x, w, b), p)), [x, w, b])

    @pytest.mark.parametrize("stride", [1, 2])
    def test_conv2d(self, stride):
        x, w, b = _t((2, 3, 4, 4)), _t((4, 3, 3, 3)), _t((4,))
        out_hw = 4 // stride
        p = _proj((2, 4, out_hw, out_hw))
        _check(lambda: ops.tsum(ops.mul(ops.conv2d(x, w, b, stride=stride), p)), [x, w, b])

    def test_conv_transpose2d(self):
        x, w, b = _t((2, 3, 4, 4)), _t((3, 4, 2, 2)), _t((4,))
        p = _proj((2, 4, 8, 8))
        _check(lambda: ops.tsum(ops.mul(ops.conv_transpose2d(x, w, b), p)), [x, w, b])

    def test_group_norm(self):
        x = _t((2, 4, 4, 4))
        gamma = Tensor(1.0 + 0.3 * RNG.standard_normal(4), requires_grad=True)
        beta = Tensor(0.3 * RNG.standard_normal(4), requires_grad=True)
        p = _proj((2, 4, 4, 4))
        _check(lambda: ops.tsum(ops.mul(ops.group_norm(x, gamma, beta, 2), p)), [x, gamma, beta])

    def test_avg_pool(self):
        x = _t((2, 3, 4, 4))
        p = _proj((2, 3, 2, 2))
        _check(lambda: ops.tsum(ops.mul(ops.avg_pool2d(x), p)), [x])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = _t((2, 3, 4, 4))
        ops.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_norm_squared_gradient(self):
        x = _t((2, 3, 4, 4))
        ops.tsum(ops.square(x)).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-12)

    def test_three_layer_conv_net_full_check(self):
        rng = np.random.default_rng(1)
        layers = [Conv2d(rng, 2, 3), GroupNorm(3, 3), Conv2d(rng, 3, 3, stride=2), Conv2d(rng, 3, 2)]
        for _, p in [pp for l in layers for pp in l.named_params()]:
            p.data = p.data.astype(np.float64)
        x = Tensor(rng.standard_normal((2, 2, 4, 4)), requires_grad=True)
        proj = Tensor(rng.standard_normal((2, 2, 2, 2)))

        def net():
            h = ops.silu(layers[0](x))
            h = layers[1](h)
            h = ops.silu(layers[2](h))
            return ops.tsum(ops.mul(layers[3](h), proj))

        params = [x] + [p for l in layers for _, p in l.named_params()]
        err = gradcheck.check_gradients(net, params)
        assert err < 1e-5

    def test_backward_requires_scalar(self):
        x = _t((2, 2))
        with pytest.raises(ValueError, match="scalar"):
            ops.square(x).backward()

    def test_diamond_graph_accumulates(self):
        x = _t((3,))
        y = ops.add(ops.square(x), ops.mul(x, Tensor(np.full(3, 2.0))))
        ops.tsum(y).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 2.0, atol=1e-12)


class TestNumerics:
    def test_nan_output_raises(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        with np.errstate(invalid="ignore"), pytest.raises(NumericsError, match="log"):
            ops.log(x)

    def test_overflow_raises(self):
        x = Tensor(np.array([1000.0]), requires_grad=True)
        with np.errstate(over="ignore"), pytest.raises(NumericsError, match="exp"):
            ops.exp(x)

    def test_shape_mismatch_conv(self):
        x, w = _t((2, 3, 4, 4)), _t((4, 5, 3, 3))
        with pytest.raises(ValueError, match="channel mismatch"):
            ops.conv2d(x, w, None)
        with pytest.raises(ValueError, match="stride"):
            ops.conv2d(x, _t((4, 3, 3, 3)), None, stride=3)

    def test_group_norm_divisibility(self):
        x = _t((2, 5, 4, 4))
        with pytest.raises(ValueError, match="divisible"):
            ops.group_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), 2)


class TestForwardSemantics:
    def test_conv_identity_kernel(self):
        x = _t((1, 1, 6, 6), requires_grad=False)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = ops.conv2d(x, Tensor(w), None)
        np.testing.assert_allclose(out.data, x.data, atol=1e-12)

    def test_concat_shapes(self):
        a, b = _t((2, 3, 4, 4)), _t((2, 1, 4, 4))
        assert ops.concat([a, b], axis=1).shape == (2, 4, 4, 4)

    def test_timestep_embedding_values(self):
        emb = ops.timestep_embedding([0, 1], 8).data
        assert emb.shape == (2, 8)
        np.testing.assert_allclose(emb[0], [0, 0, 0, 0, 1, 1, 1, 1], atol=1e-12)
        freqs = np.exp(-np.log(10000.0) * np.arange(4) / 4)
        np.testing.assert_allclose(emb[1, :4], np.sin(freqs), atol=1e-6)
        np.testing.assert_allclose(emb[1, 4:], np.cos(freqs), atol=1e-6)

    def test_avg_pool_values(self):
        x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        out = ops.avg_pool2d(x)
        np.testing.assert_allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_kernel_backends_agree(self):
        if not kernels.HAVE_COMPILED:
            pytest.skip("compiled kernels not built")
        x = RNG.standard_normal((2, 3, 8, 8))
        cols = RNG.standard_normal((2, 27, 64))
        for stride in (1, 2):
            prev = kernels.use_backend("numpy")
            a = kernels.im2col(x, 3, stride, 1)
            c = kernels.col2im(kernels.im2col(x, 3, stride, 1), x.shape, 3, stride, 1)
            kernels.use_backend("cython")
            b = kernels.im2col(x, 3, stride, 1)
            d = kernels.col2im(kernels.im2col(x, 3, stride, 1), x.shape, 3, stride, 1)
            kernels.use_backend(prev)
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(c, d)


class TestDeterminism:
    def test_identical_training_steps(self):
        from crosstouch.nn import AdamState, adam_step, zero_grads

        def run():
            rng = np.random.default_rng(0)
            conv = Conv2d(rng, 2, 2)
            x = Tensor(rng.standard_normal((4, 2, 8, 8)).astype(np.float32))
            params = conv.params()
            opt = AdamState(params, lr=1e-3)
            for _ in range(5):
                zero_grads(params)
                loss = ops.tmean(ops.square(conv(x)))
                loss.backward()
                adam_step(opt, params)
            return [p.data.copy() for p in params]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)
