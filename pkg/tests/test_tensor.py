import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from samamba import reference
from samamba.engine import functional as F
from samamba.engine import tensor as T
from samamba.engine.gradcheck import finite_diff_check
from samamba.verify import _op_cases


def t64(a, grad=False):
    return T.Tensor(np.array(a, dtype=np.float64), requires_grad=grad)


def test_add_componentwise():
    np.testing.assert_array_equal(T.add(t64([1, 2]), t64([3, 4])).data, [4, 6])


def test_mul_by_ones_is_identity(rng):
    x = t64(rng.standard_normal((3, 5)))
    np.testing.assert_array_equal(T.mul(x, T.Tensor(np.ones_like(x.data))).data, x.data)


def test_division_by_zero_flagged_in_verification_mode():
    with T.verification_mode(True), pytest.raises(T.NonFiniteError):
        T.div(t64([1.0, 0.0]), t64([0.0, 1.0]))
    out = T.div(t64([1.0, 0.0]), t64([0.0, 1.0]))
    assert np.isinf(out.data[0])


def test_matmul_identity_and_small_case(rng):
    X = t64(rng.standard_normal((2, 6)))
    np.testing.assert_array_equal(T.matmul(t64(np.eye(2)), X).data, X.data)
    np.testing.assert_array_equal(T.matmul(t64([[1, 2], [3, 4]]), t64([[5], [6]])).data, [[17], [39]])


def test_matmul_gradient_finite_difference(rng):
    B = t64(rng.standard_normal((4, 3)))
    rep = finite_diff_check(lambda a: T.sum_(T.matmul(a, B)), t64(rng.standard_normal((2, 4))), tol=1e-6)
    assert rep.passed, rep.max_rel_err


def test_activation_fixed_points():
    assert F.sigmoid(t64([0.0])).data[0] == 0.5
    assert F.silu(t64([0.0])).data[0] == 0.0
    np.testing.assert_allclose(F.softmax(t64([2.0, 2.0, 2.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


@given(hnp.arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_sigmoid_ranges(x):
    s = F.softmax(t64(x), -1).data
    assert np.all(s > 0) and np.all(s <= 1)
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-6)
    sg = F.sigmoid(t64(np.clip(x, -30, 30))).data
    assert np.all(sg > 0) and np.all(sg < 1)


def test_sum_and_square_gradients(rng):
    x = t64(rng.standard_normal(5), grad=True)
    T.backward(T.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones(5))
    x.grad = None
    T.backward(T.sum_(x * x))
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("op", sorted(_op_cases(np.random.default_rng(0))))
def test_op_gradients(op, seed):
    fn, arr = _op_cases(np.random.default_rng(seed))[op]
    rep = finite_diff_check(fn, t64(arr), h=1e-6, tol=1e-4, floor=1e-6)
    assert rep.passed, f"{op}: {rep.max_rel_err:.2e} at {rep.worst}"


@given(
    st.sampled_from([((3, 4), (4,)), ((3, 4), (3, 1)), ((2, 3, 4), (1, 3, 1)), ((3, 1), (1, 4))]),
    st.integers(0, 2**31),
)
def test_broadcast_gradient_equals_materialised_expansion(shapes, seed):
    rng = np.random.default_rng(seed)
    sa, sb = shapes
    a = t64(rng.standard_normal(sa), grad=True)
    b = t64(rng.standard_normal(sb), grad=True)
    w = rng.standard_normal(np.broadcast_shapes(sa, sb))
    T.backward(T.sum_(T.mul(a, b) * T.Tensor(w)))
    # expand b explicitly, differentiate, then sum over the broadcast axes
    full = np.broadcast_to(b.data, w.shape)
    g_full = np.broadcast_to(a.data, w.shape) * w
    axes = tuple(range(len(w.shape) - len(sb)))
    g = g_full.sum(axis=axes) if axes else g_full
    keep = tuple(i for i, n in enumerate(sb) if n == 1 and g.shape[i] != 1)
    g = g.sum(axis=keep, keepdims=True) if keep else g
    np.testing.assert_allclose(b.grad, g.reshape(sb), rtol=1e-12, atol=1e-12)
    assert full.shape == w.shape


def test_second_backward_raises_stale_tape(rng):
    x = t64(rng.standard_normal(3), grad=True)
    loss = T.sum_(T.exp(x))
    T.backward(loss)
    with pytest.raises(T.StaleTapeError):
        T.backward(loss)


def test_no_grad_records_nothing(rng):
    x = t64(rng.standard_normal(3), grad=True)
    with T.no_grad():
        y = T.exp(x)
    assert y._node is None


def test_forward_determinism(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    a = F.conv2d(t64(x), t64(w), None, 1, 1).data
    b = F.conv2d(t64(x), t64(w), None, 1, 1).data
    assert np.array_equal(a, b)


class TestConvolution:
    def test_identity_permutation_1x1(self, rng):
        x = rng.standard_normal((1, 4, 5, 5))
        perm = [2, 0, 3, 1]
        w = np.zeros((4, 4, 1, 1))
        for o, i in enumerate(perm):
            w[o, i] = 1.0
        np.testing.assert_array_equal(F.conv2d(t64(x), t64(w)).data, x[:, perm])

    def test_averaging_kernel_keeps_constant_interior(self):
        x = np.full((1, 1, 6, 6), 3.5)
        w = np.full((1, 1, 3, 3), 1 / 9)
        out = F.conv2d(t64(x), t64(w), None, 1, 1).data
        np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 3.5, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (4, 2, 5), (1, 0, 1), (2, 3, 7)])
    def test_matches_direct_loop_oracle(self, rng, stride, pad, k):
        x = rng.standard_normal((2, 3, 9, 9))
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        got = F.conv2d(t64(x), t64(w), t64(b), stride, pad).data
        np.testing.assert_allclose(got, reference.conv2d(x, w, b, stride, pad), rtol=0, atol=1e-12)

    def test_transpose_conv_matches_scatter_oracle(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        w = rng.standard_normal((3, 2, 4, 4))
        b = rng.standard_normal(2)
        got = F.conv_transpose2d(t64(x), t64(w), t64(b), 4).data
        np.testing.assert_allclose(got, reference.conv_transpose2d(x, w, b, 4), rtol=0, atol=1e-12)


class TestNormalisation:
    def test_layer_norm_constant_and_pair(self):
        out = F.layer_norm(t64([[2.0, 2.0, 2.0]]), None, None).data
        np.testing.assert_array_equal(out, np.zeros((1, 3)))
        out = F.layer_norm(t64([[1.0, -1.0]]), None, None, eps=1e-12).data
        np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-9)

    def test_batch_norm_running_average_converges(self, rng):
        x = t64(rng.standard_normal((16, 3, 16, 16)) * 2 + 1)
        scale, shift = t64(np.ones(3)), t64(np.zeros(3))
        rm, rv = np.zeros(3), np.ones(3)
        for _ in range(200):
            train_out = F.batch_norm(x, scale, shift, rm, rv, True, 0.1, 1e-5).data
        eval_out = F.batch_norm(x, scale, shift, rm, rv, False, 0.1, 1e-5).data
        np.testing.assert_allclose(eval_out, train_out, atol=1e-3)
        # the running variance is the unbiased estimate
        n = 16 * 256
        np.testing.assert_allclose(rv, x.data.var(axis=(0, 2, 3)) * n / (n - 1), rtol=1e-8)


class TestBilinear:
    def test_constant_map(self):
        out = F.bilinear_upsample(t64(np.full((1, 1, 2, 2), 0.7)), 4, 4).data
        np.testing.assert_allclose(out, 0.7, rtol=0, atol=1e-15)

    def test_monotone_ramp(self):
        out = F.bilinear_upsample(t64([[[[0.0, 1.0]]]]), 1, 4).data.ravel()
        assert np.all(np.diff(out) >= 0) and out.min() >= 0 and out.max() <= 1

    @pytest.mark.parametrize("n_in,n_out", [(2, 4), (3, 7), (4, 8), (5, 5), (8, 32)])
    def test_weights_match_explicit_formula(self, n_in, n_out):
        np.testing.assert_allclose(F.bilinear_weights(n_in, n_out), reference.bilinear_weights(n_in, n_out), atol=1e-12)

    def test_random_case(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        got = F.bilinear_upsample(t64(x), 8, 10).data
        wh, ww = reference.bilinear_weights(4, 8), reference.bilinear_weights(5, 10)
        want = np.einsum("ih,bchw,jw->bcij", wh, x, ww)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    def test_downsampling_rejected(self):
        with pytest.raises(T.ShapeError):
            F.bilinear_upsample(t64(np.zeros((1, 1, 4, 4))), 2, 2)


def test_mac_counter_counts_conv(rng):
    x = t64(rng.standard_normal((2, 3, 8, 8)))
    w = t64(rng.standard_normal((5, 3, 3, 3)))
    with T.count_macs() as c:
        F.conv2d(x, w, None, 2, 1)
    assert c.total == reference.conv_macs(2, 3, 5, 3, 4, 4)
