"""Numeric core: op semantics against loop oracles, backward contracts,
finite-difference gate for the core ops."""

import numpy as np
import pytest

from mostats import autodiff as ad
from mostats.errors import ContractError, DimensionError, NumericError
from mostats.rng import Rng


# ---------------------------------------------------------------------------
# independent loop oracles
# ---------------------------------------------------------------------------

def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def conv_oracle(x, k, stride, padding):
    c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((f, ho, wo))
    for fo in range(f):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(c):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += xp[ci, i * stride + dy, j * stride + dx] * k[fo, ci, dy, dx]
                out[fo, i, j] = acc
    return out


def maxpool_oracle(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ci in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ci, i, j] = max(x[ci, 2 * i, 2 * j], x[ci, 2 * i, 2 * j + 1],
                                    x[ci, 2 * i + 1, 2 * j], x[ci, 2 * i + 1, 2 * j + 1])
    return out


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(ad.constant(np.eye(2)), ad.constant(m))
        np.testing.assert_array_equal(out.value, m)

    def test_selector(self):
        out = ad.matmul(ad.constant([[1.0, 0.0]]), ad.constant([[0.0], [5.0]]))
        np.testing.assert_array_equal(out.value, [[0.0]])

    def test_against_triple_loop(self):
        rng = Rng(11)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        got = ad.matmul(ad.constant(a), ad.constant(b)).value
        expect = matmul_oracle(a, b)
        assert np.abs(got - expect).max() < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 2))))

    def test_batched_matches_per_item(self):
        rng = Rng(12)
        a = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=(4, 5, 2))
        got = ad.matmul(ad.constant(a), ad.constant(b)).value
        for i in range(4):
            np.testing.assert_allclose(got[i], a[i] @ b[i], atol=1e-12)


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

class TestConv2d:
    def test_delta_kernel_is_identity(self):
        rng = Rng(3)
        x = rng.normal(size=(1, 3, 3))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = ad.conv2d(ad.constant(x), ad.constant(k), stride=1, padding=1)
        np.testing.assert_allclose(out.value, x, atol=1e-14)

    def test_zero_kernels(self):
        x = Rng(4).normal(size=(2, 5, 5))
        out = ad.conv2d(ad.constant(x), ad.constant(np.zeros((3, 2, 3, 3))), 1, 1)
        assert np.all(out.value == 0.0)

    @pytest.mark.parametrize("stride,padding", [(1, 1), (1, 0), (2, 1)])
    def test_against_six_loop_oracle(self, stride, padding):
        rng = Rng(5 + stride + padding)
        x = rng.normal(size=(2, 6, 7))
        k = rng.normal(size=(3, 2, 3, 3))
        got = ad.conv2d(ad.constant(x), ad.constant(k), stride, padding).value
        expect = conv_oracle(x, k, stride, padding)
        assert np.abs((got - expect) / np.maximum(1.0, np.abs(expect))).max() < 1e-10

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError):
            ad.conv2d(ad.constant(np.ones((1, 2, 2))), ad.constant(np.ones((1, 1, 3, 3))),
                      stride=1, padding=0)


# ---------------------------------------------------------------------------
# maxpool2
# ---------------------------------------------------------------------------

class TestMaxpool2:
    def test_single_window(self):
        out = ad.maxpool2(ad.constant(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
        np.testing.assert_array_equal(out.value, [[[4.0]]])

    def test_tie_routes_gradient_to_first_window_position(self):
        x = ad.leaf(np.full((1, 2, 2), 7.0))
        out = ad.maxpool2(x)
        np.testing.assert_array_equal(out.value, [[[7.0]]])
        ad.backward(ad.sum_(out))
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    def test_against_window_scan_oracle(self):
        x = Rng(6).normal(size=(1, 4, 4))
        got = ad.maxpool2(ad.constant(x)).value
        np.testing.assert_array_equal(got, maxpool_oracle(x))

    def test_too_small(self):
        with pytest.raises(DimensionError):
            ad.maxpool2(ad.constant(np.ones((1, 1, 4))))

    def test_odd_edges_dropped(self):
        x = Rng(7).normal(size=(2, 5, 5))
        got = ad.maxpool2(ad.constant(x)).value
        np.testing.assert_array_equal(got, maxpool_oracle(x[:, :4, :4]))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

class TestBackward:
    def test_sum_gives_ones(self):
        x = ad.leaf(Rng(8).normal(size=(3, 2, 4)))
        ad.backward(ad.sum_(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 2, 4)))

    def test_half_dot_gives_x(self):
        v = Rng(9).normal(size=7)
        x = ad.leaf(v.copy())
        loss = ad.mul(ad.sum_(ad.mul(x, x)), ad.constant(0.5))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, v, atol=1e-14)

    def test_non_scalar_loss_rejected(self):
        x = ad.leaf(np.ones(3))
        with pytest.raises(ContractError):
            ad.backward(ad.mul(x, x))

    def test_diamond_graph_accumulates_once(self):
        # loss = (x*x) + (x*x) built as two distinct product nodes sharing x
        x = ad.leaf(np.array([3.0]))
        a = ad.mul(x, x)
        b = ad.mul(x, x)
        ad.backward(ad.sum_(ad.add(a, b)))
        np.testing.assert_allclose(x.grad, [12.0])

    def test_reused_node_visits_once(self):
        x = ad.leaf(np.array([2.0]))
        sq = ad.mul(x, x)
        loss = ad.sum_(ad.add(sq, sq))  # same node appears twice as a parent
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [8.0])

    def test_grad_shapes_match_leaves(self):
        rng = Rng(10)
        x = ad.leaf(rng.normal(size=(4, 3)))
        w = ad.leaf(rng.normal(size=(3, 2)))
        ad.backward(ad.sum_(ad.matmul(x, w)))
        assert x.grad.shape == x.value.shape
        assert w.grad.shape == w.value.shape


# ---------------------------------------------------------------------------
# finite_diff_check
# ---------------------------------------------------------------------------

class TestFiniteDiffCheck:
    def test_sum_exact(self):
        # the central difference cancels |sum|-scale roundoff against 2h,
        # so "machine precision" here is eps/2h, around 1e-11
        err = ad.finite_diff_check(ad.sum_, Rng(1).normal(size=6))
        assert err < 1e-10

    def test_l2_norm(self):
        x = Rng(2).normal(size=5) + 3.0
        err = ad.finite_diff_check(lambda v: ad.sqrt(ad.sum_(ad.mul(v, v))), x, h=1e-5)
        assert err < 1e-6

    def test_rejects_f32(self):
        with pytest.raises(ContractError):
            ad.finite_diff_check(ad.sum_, np.ones(3, dtype=np.float32))

    def test_analytic_vs_central_catches_wrong_gradient(self):
        # double the backward of a quadratic: relative error must be ~1
        def wrong(v):
            out = ad.mul(v, v)

            def back(g):
                ad._accumulate(v, 4.0 * v.value * g)  # should be 2x

            bad = ad.Node(out.value.copy(), (v,), back, requires_grad=True)
            return ad.sum_(bad)

        err = ad.finite_diff_check(wrong, np.array([1.0, 2.0]))
        assert err > 0.1


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

class TestInvariants:
    CORE_OPS = ("add", "sub", "mul", "div", "exp", "log", "sqrt", "power", "relu",
                "matmul_2d", "conv2d", "maxpool2", "sum", "mean", "reshape",
                "transpose", "concat", "diagonal", "select_labels")

    def test_core_ops_pass_finite_differences_on_twenty_inputs(self):
        from mostats import gradcheck as gc
        worst: dict[str, float] = {}
        for r in range(20):
            rng = Rng(1000 + r)
            for group in (gc._elementwise_checks, gc._shape_checks, gc._reduction_checks,
                          gc._linalg_checks, gc._conv_checks):
                for name, err in group(rng):
                    worst[name] = max(worst.get(name, 0.0), err)
        for name in self.CORE_OPS:
            if name in worst:
                assert worst[name] < 1e-4, f"{name}: {worst[name]}"

    def test_cast_backward_is_identity_conversion(self):
        # cast quantizes values, so central differences at h=1e-5 are
        # meaningless through f32; the backward rule is checked exactly.
        x = ad.leaf(Rng(3).normal(size=(3, 3)))
        y = ad.cast(x, "f32")
        ad.backward(ad.sum_(ad.cast(y, "f64")))
        np.testing.assert_array_equal(x.grad, np.ones((3, 3)))
        assert y.value.dtype == np.float32

    def test_same_seed_bit_identical(self):
        a = Rng(42).normal(size=(100,))
        b = Rng(42).normal(size=(100,))
        assert a.tobytes() == b.tobytes()

    def test_nan_surfaces_as_numeric_error(self):
        with pytest.raises(NumericError):
            ad.constant(np.array([1.0, np.nan]))
        with pytest.raises(NumericError):
            ad.log(ad.constant(np.array([0.0])))
        with pytest.raises(NumericError):
            ad.div(ad.constant(np.ones(2)), ad.constant(np.zeros(2)))

    def test_dtype_mixing_rejected(self):
        a = ad.constant(np.ones(2, dtype=np.float32))
        b = ad.constant(np.ones(2, dtype=np.float64))
        with pytest.raises(ContractError):
            ad.add(a, b)

    def test_op_outputs_are_frozen(self):
        out = ad.add(ad.constant(np.ones(3)), ad.constant(np.ones(3)))
        with pytest.raises(ValueError):
            out.value[0] = 5.0

    def test_reshape_of_op_output_is_view(self):
        out = ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.zeros((2, 3))))
        reshaped = ad.reshape(out, (6,))
        assert reshaped.value.base is not None

    def test_matmul_agrees_with_oracle_on_random_shapes(self):
        rng = Rng(77)
        for _ in range(5):
            m, k, n = (int(v) for v in rng.integers(1, 6, size=3))
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            got = ad.matmul(ad.constant(a), ad.constant(b)).value
            rel = np.abs(got - matmul_oracle(a, b)) / np.maximum(1.0, np.abs(got))
            assert rel.max() < 1e-10
