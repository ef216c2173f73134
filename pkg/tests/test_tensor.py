"""Tensor core: forward values against hand-computed cases, reverse-mode
gradients against central finite differences (double precision)."""

import numpy as np
import pytest

from orthosphere import ops
from orthosphere.rng import Rng
from orthosphere.tensor import Tensor, grad_check, no_grad


def t64(arr, requires_grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def primitive_cases(seed, dtype):
    """One probe per differentiable primitive: (scalar function, input array).

    Inputs are constructed clear of every kink (relu corners, pool ties) and
    each probe contracts the op output against a fixed random weight array,
    so the finite-difference signal never degenerates. All randomness is
    drawn in float64 and cast, so the float32 and float64 instantiations of
    a seed see the same numbers.
    """
    rng = np.random.default_rng(1000 + seed)

    def arr(*shape):
        return rng.standard_normal(shape).astype(dtype)

    def distinct(*shape):
        # distinct, well-separated values so max-pool windows have no near-ties
        n = int(np.prod(shape))
        vals = (rng.permutation(n) * 0.05 - 0.025 * n).astype(dtype)
        return vals.reshape(shape)

    def away_from_zero(*shape):
        x = rng.standard_normal(shape)
        return (np.sign(x) * (np.abs(x) + 0.5)).astype(dtype)

    x4 = arr(2, 3, 6, 6)
    kern = arr(4, 3, 3, 3)
    xd, wd, bd = arr(5, 4), arr(4, 3), arr(3)
    gamma, beta = arr(3), arr(3)
    xbn = arr(8, 3, 4, 4)

    def bn_wrt(which):
        def op(t):
            args = {"x": Tensor(xbn), "gamma": Tensor(gamma), "beta": Tensor(beta)}
            args[which] = t
            state = ops.bn_state(3, dtype=dtype)
            return ops.batch_norm(args["x"], args["gamma"], args["beta"], state, "train")
        return op

    raw = {
        "conv2d/input": (lambda t: ops.conv2d(t, Tensor(kern), 1, 1), x4),
        "conv2d/kernel": (lambda t: ops.conv2d(Tensor(x4), t, 1, 1), kern),
        "max_pool2d": (lambda t: ops.max_pool2d(t, 2, 2), distinct(1, 2, 6, 6)),
        "global_avg_pool": (ops.global_avg_pool, arr(2, 3, 4, 4)),
        "dense/x": (lambda t: ops.dense(t, Tensor(wd), Tensor(bd)), xd),
        "dense/w": (lambda t: ops.dense(Tensor(xd), t, Tensor(bd)), wd),
        "dense/b": (lambda t: ops.dense(Tensor(xd), Tensor(wd), t), bd),
        "leaky_relu": (lambda t: ops.leaky_relu(t, 0.1), away_from_zero(3, 7)),
        "softmax": (ops.softmax, arr(4, 5)),
        "batch_norm/x": (bn_wrt("x"), xbn),
        "batch_norm/gamma": (bn_wrt("gamma"), gamma),
        "batch_norm/beta": (bn_wrt("beta"), beta),
    }
    cases = {}
    for name, (op, x) in raw.items():
        w = rng.standard_normal(op(Tensor(x)).shape).astype(dtype)
        cases[name] = (
            lambda t, op=op, w=w: (op(t) * Tensor(w)).sum(),
            x,
        )
    return cases


def primitive_grad_errors(seed, dtype, eps):
    return {
        name: grad_check(f, Tensor(x), eps)
        for name, (f, x) in primitive_cases(seed, dtype).items()
    }


def analytic_grad(f, x):
    t = Tensor(np.array(x, copy=True), requires_grad=True)
    f(t).backward()
    return np.zeros_like(x) if t.grad is None else t.grad


def single_vs_double_grad_errors(seed):
    cases32 = primitive_cases(seed, np.float32)
    cases64 = primitive_cases(seed, np.float64)
    errs = {}
    for name in cases64:
        f32, x32 = cases32[name]
        f64, x64 = cases64[name]
        g32 = analytic_grad(f32, x32).astype(np.float64)
        g64 = analytic_grad(f64, x64)
        denom = np.maximum(np.maximum(np.abs(g32), np.abs(g64)), 1e-8)
        errs[name] = float(np.max(np.abs(g32 - g64) / denom))
    return errs


class TestConv2d:
    def test_identity_1x1(self):
        x = t64(np.random.default_rng(0).standard_normal((2, 3, 5, 5)))
        k = Tensor(np.zeros((3, 3, 1, 1)))
        for c in range(3):
            k.data[c, c, 0, 0] = 1.0
        out = ops.conv2d(x, k, stride=1, pad=0)
        np.testing.assert_allclose(out.data, x.data)

    def test_hand_convolution(self):
        x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
        k = t64(np.full((1, 1, 2, 2), 0.25))
        out = ops.conv2d(x, k, stride=1, pad=0)
        np.testing.assert_allclose(out.data, [[[[2.5]]]])

    def test_shape_arithmetic(self):
        x = Tensor(np.zeros((2, 3, 32, 32), dtype=np.float32))
        k = Tensor(np.zeros((128, 3, 3, 3), dtype=np.float32))
        assert ops.conv2d(x, k, stride=1, pad=1).shape == (2, 128, 32, 32)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 3, 8, 8)))
        k = Tensor(np.zeros((4, 2, 3, 3)))
        with pytest.raises(ValueError, match="channel"):
            ops.conv2d(x, k)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        y = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        k = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32))
        a, b = 1.7, -0.6
        lhs = ops.conv2d(Tensor(a * x + b * y), k, pad=1).data
        rhs = a * ops.conv2d(Tensor(x), k, pad=1).data + b * ops.conv2d(Tensor(y), k, pad=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


class TestMaxPool:
    def test_hand_evaluation(self):
        x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = ops.max_pool2d(x, 2, 2)
        np.testing.assert_allclose(out.data, [[[[4.0]]]])

    def test_constant_input(self):
        x = Tensor(np.full((1, 2, 4, 4), 3.25, dtype=np.float32))
        out = ops.max_pool2d(x, 2, 2)
        assert (out.data == 3.25).all()

    def test_shape(self):
        x = Tensor(np.zeros((1, 1, 6, 6)))
        assert ops.max_pool2d(x, 2, 2).shape == (1, 1, 3, 3)

    def test_window_too_large_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ops.max_pool2d(Tensor(np.zeros((1, 1, 2, 2))), 3, 1)

    def test_tie_gradient_first_occurrence(self):
        x = t64(np.ones((1, 1, 2, 2)), requires_grad=True)
        out = ops.max_pool2d(x, 2, 2)
        out.sum().backward()
        np.testing.assert_allclose(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])


class TestGlobalAvgPool:
    def test_hand_mean(self):
        x = t64([[[[1.0, 3.0], [5.0, 7.0]]]])
        np.testing.assert_allclose(ops.global_avg_pool(x).data, [[4.0]])

    def test_constant_channel(self):
        x = Tensor(np.full((2, 3, 4, 4), 0.5, dtype=np.float32))
        np.testing.assert_allclose(ops.global_avg_pool(x).data, 0.5, rtol=1e-6)

    def test_shape_full_scale(self):
        x = Tensor(np.zeros((100, 128, 6, 6), dtype=np.float32))
        assert ops.global_avg_pool(x).shape == (100, 128)


class TestDense:
    def test_identity(self):
        x = t64([[1.0, 2.0], [3.0, 4.0]])
        out = ops.dense(x, t64(np.eye(2)), t64([0.0, 0.0]))
        np.testing.assert_allclose(out.data, x.data)

    def test_hand_affine(self):
        out = ops.dense(t64([[1.0, 2.0]]), t64([[1.0], [1.0]]), t64([0.5]))
        np.testing.assert_allclose(out.data, [[3.5]])

    def test_shape(self):
        out = ops.dense(Tensor(np.zeros((100, 128))), Tensor(np.zeros((128, 10))), Tensor(np.zeros(10)))
        assert out.shape == (100, 10)

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dense"):
            ops.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


class TestLeakyRelu:
    def test_negative_branch(self):
        np.testing.assert_allclose(ops.leaky_relu(t64([-2.0]), 0.1).data, [-0.2])

    def test_positive_identity(self):
        np.testing.assert_allclose(ops.leaky_relu(t64([3.0]), 0.1).data, [3.0])

    def test_alpha_zero_is_relu(self):
        np.testing.assert_allclose(ops.leaky_relu(t64([-5.0]), 0.0).data, [0.0])

    def test_derivative_at_zero_is_alpha(self):
        x = t64([0.0], requires_grad=True)
        ops.leaky_relu(x, 0.1).sum().backward()
        np.testing.assert_allclose(x.grad, [0.1])


class TestBatchNorm:
    def test_fixed_point(self):
        rng = np.random.default_rng(3)
        raw = rng.standard_normal((64, 4)).astype(np.float64)
        raw = (raw - raw.mean(axis=0)) / raw.std(axis=0)
        state = ops.bn_state(4, dtype=np.float64)
        out = ops.batch_norm(t64(raw), t64(np.ones(4)), t64(np.zeros(4)), state, "train", eps=1e-12)
        np.testing.assert_allclose(out.data, raw, atol=1e-6)

    def test_hand_normalization(self):
        x = t64([[0.0], [2.0]])
        state = ops.bn_state(1, dtype=np.float64)
        out = ops.batch_norm(x, t64([1.0]), t64([0.0]), state, "train", eps=0.0)
        np.testing.assert_allclose(out.data, [[-1.0], [1.0]])

    def test_beta_shift(self):
        rng = np.random.default_rng(4)
        x = t64(rng.standard_normal((32, 3, 4, 4)))
        state = ops.bn_state(3, dtype=np.float64)
        out = ops.batch_norm(x, t64(np.ones(3)), t64(np.full(3, 5.0)), state, "train")
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), [5.0, 5.0, 5.0], atol=1e-6)

    def test_single_sample_rejected(self):
        state = ops.bn_state(2)
        with pytest.raises(ValueError, match="N >= 2"):
            ops.batch_norm(Tensor(np.zeros((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), state, "train")

    def test_eval_uses_running_stats(self):
        state = {"mean": np.array([1.0]), "var": np.array([4.0])}
        out = ops.batch_norm(t64([[3.0], [5.0]]), t64([1.0]), t64([0.0]), state, "eval", eps=0.0)
        np.testing.assert_allclose(out.data, [[1.0], [2.0]])


class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert ops.dropout(x, 0.0, Rng(0), "train") is x

    def test_eval_identity(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert ops.dropout(x, 0.9, Rng(0), "eval") is x

    def test_survivor_fraction(self):
        x = Tensor(np.ones(100_000))
        out = ops.dropout(x, 0.5, Rng(7), "train")
        frac = (out.data != 0).mean()
        assert abs(frac - 0.5) < 0.01

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError, match="rate"):
            ops.dropout(Tensor(np.ones(3)), 1.0, Rng(0), "train")


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(ops.softmax(t64([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_closed_form(self):
        out = ops.softmax(t64([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(out.data, [[2.0 / 3.0, 1.0 / 3.0]], rtol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((4, 6))
        a = ops.softmax(t64(z)).data
        b = ops.softmax(t64(z + 17.3)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rows_sum_to_one_extreme_logits(self):
        rng = np.random.default_rng(6)
        z = rng.uniform(-50, 50, size=(50, 10)).astype(np.float32)
        s = ops.softmax(Tensor(z)).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
        assert (s >= 0).all()


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.arange(12.0).reshape(3, 4), requires_grad=True)
        x.sum().backward()
        np.testing.assert_allclose(x.grad, np.ones((3, 4)))

    def test_quadratic(self):
        x = t64([1.0, -2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_nonscalar_root_rejected(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_unreached_leaf_gets_no_gradient(self):
        x = t64([1.0], requires_grad=True)
        y = t64([2.0], requires_grad=True)
        (x * x).sum().backward()
        assert y.grad is None

    def test_backward_deterministic_on_same_graph(self):
        rng = np.random.default_rng(8)
        x = t64(rng.standard_normal((4, 5)), requires_grad=True)
        out = ((x * x).sum(axis=1) * 0.5).sum()
        out.backward()
        first = x.grad.copy()
        for node in out.topo_order():
            node.zero_grad()
        out.backward()
        np.testing.assert_array_equal(first, x.grad)

    def test_no_grad_suspends_recording(self):
        x = t64([1.0], requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert y._backward is None and not y.requires_grad


class TestGradCheck:
    def test_sum_of_squares(self):
        x = np.random.default_rng(9).standard_normal(7)
        assert grad_check(lambda t: (t * t).sum(), Tensor(x), eps=1e-4) < 1e-6

    def test_constant_function(self):
        err = grad_check(lambda t: Tensor(np.zeros(())) + (t * 0.0).sum(), Tensor(np.ones(3)), eps=1e-4)
        assert err == 0.0

    def test_leaky_relu_away_from_kink(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal(20)
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # keep clear of the kink
        err = grad_check(lambda t: ops.leaky_relu(t, 0.1).sum(), Tensor(x), eps=1e-5)
        assert err < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_primitives_random_points_double(self, seed):
        errs = primitive_grad_errors(seed, np.float64, eps=1e-5)
        worst = max(errs.values())
        assert worst < 1e-5, errs

    @pytest.mark.parametrize("seed", range(10))
    def test_primitives_random_points_single(self, seed):
        # float32 backward vs the float64 reference gradient (itself validated
        # against finite differences above): same code paths, single precision
        errs = single_vs_double_grad_errors(seed)
        worst = max(errs.values())
        assert worst < 1e-3, errs

    def test_composite_graph_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 2, 6, 6))
        k = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        labels = np.array([1, 3])

        def loss_wrt_kernel(kt):
            h = ops.conv2d(Tensor(x), kt, stride=1, pad=1)
            h = ops.max_pool2d(h, 2, 2)
            h = ops.global_avg_pool(h)
            h = ops.dense(h, w, b)
            p = ops.softmax(h)
            picked = p.select_columns(labels).clamp_min(1e-12)
            return -picked.log().mean()

        assert grad_check(loss_wrt_kernel, k, eps=1e-5) < 1e-5


class TestGenericOps:
    def test_matmul_gradients(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((3, 4))
        bmat = rng.standard_normal((4, 2))
        assert grad_check(lambda t: (t @ Tensor(bmat)).sum(), Tensor(a)) < 1e-7
        assert grad_check(lambda t: (Tensor(a) @ t * 2.0).sum(), Tensor(bmat)) < 1e-7

    def test_bmm_gradients(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((5, 3, 2))
        def f(t):
            g = t @ t.transpose((0, 2, 1))
            return (g * g).sum()
        assert grad_check(f, Tensor(a)) < 1e-6

    def test_arccos_gradient(self):
        x = np.array([0.3, -0.7, 0.05])
        assert grad_check(lambda t: t.arccos().sum(), Tensor(x)) < 1e-6

    def test_take_rows_scatter(self):
        x = t64(np.arange(12.0).reshape(4, 3), requires_grad=True)
        out = x.take_rows([1, 1, 2])
        out.sum().backward()
        np.testing.assert_allclose(x.grad, [[0, 0, 0], [2, 2, 2], [1, 1, 1], [0, 0, 0]])

    def test_broadcast_add_unbroadcast(self):
        x = t64(np.ones((3, 4)), requires_grad=True)
        bias = t64(np.zeros(4), requires_grad=True)
        (x + bias).sum().backward()
        np.testing.assert_allclose(bias.grad, [3.0, 3.0, 3.0, 3.0])

    def test_division_and_sqrt(self):
        x = np.array([1.5, 2.5, 4.0])
        assert grad_check(lambda t: (t / t.sum()).sum() + t.sqrt().sum(), Tensor(x)) < 1e-6
