import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_invert import numcore as nc
from latent_invert.checks import primitive_cases
from latent_invert.errors import ConfigError, ContractError, DimensionError, EvaluationError


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_conv(x, k, stride):
    c, h, w = x.shape
    co = k.shape[0]
    ho, wo = -(-h // stride), -(-w // stride)
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(c):
                    for di in range(3):
                        for dj in range(3):
                            r, s = i * stride + di - 1, j * stride + dj - 1
                            if 0 <= r < h and 0 <= s < w:
                                acc += x[ci, r, s] * k[o, ci, di, dj]
                out[o, i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        a = nc.tensor([[1, 2], [3, 4]])
        np.testing.assert_array_equal(nc.matmul(a, nc.tensor(np.eye(2))).data, [[1, 2], [3, 4]])

    def test_column(self):
        out = nc.matmul(nc.tensor([[1, 2], [3, 4]]), nc.tensor([[5], [6]]))
        np.testing.assert_array_equal(out.data, [[17], [39]])

    def test_zero(self):
        a = nc.Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        assert not nc.matmul(a, nc.Tensor(np.zeros((4, 2)))).data.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_against_triple_loop(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        np.testing.assert_allclose(nc.matmul(nc.Tensor(a), nc.Tensor(b)).data, naive_matmul(a, b), atol=1e-12, rtol=0)

    def test_shape_error_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nc.matmul(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((2, 3))))


class TestConv2d:
    def test_zero_input(self):
        k = nc.Tensor(np.random.default_rng(1).normal(size=(2, 1, 3, 3)))
        assert not nc.conv2d(nc.Tensor(np.zeros((1, 5, 5))), k).data.any()

    def test_identity_kernel(self):
        x = np.random.default_rng(2).normal(size=(1, 6, 7))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(nc.conv2d(nc.Tensor(x), nc.Tensor(k)).data, x)

    def test_ones_window_counts(self):
        out = nc.conv2d(nc.Tensor(np.ones((1, 4, 4))), nc.Tensor(np.ones((1, 1, 3, 3)))).data[0]
        assert out[0, 0] == out[0, 3] == out[3, 0] == out[3, 3] == 4
        assert out[1, 1] == out[1, 2] == out[2, 1] == out[2, 2] == 9
        assert out[0, 1] == 6

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("hw", [(3, 3), (5, 6), (8, 8)])
    def test_against_naive(self, stride, hw):
        rng = np.random.default_rng(hw[0] * 10 + stride)
        x = rng.normal(size=(2, *hw))
        k = rng.normal(size=(3, 2, 3, 3))
        got = nc.conv2d(nc.Tensor(x), nc.Tensor(k), stride).data
        np.testing.assert_allclose(got, naive_conv(x, k, stride), atol=1e-12)
        assert got.shape[1:] == (-(-hw[0] // stride), -(-hw[1] // stride))

    def test_batched_matches_unbatched(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2, 6, 6))
        k = nc.Tensor(rng.normal(size=(3, 2, 3, 3)))
        batched = nc.conv2d(nc.Tensor(x), k, 2).data
        for i in range(4):
            np.testing.assert_allclose(batched[i], nc.conv2d(nc.Tensor(x[i]), k, 2).data, atol=1e-14)

    def test_bad_stride(self):
        with pytest.raises(ConfigError):
            nc.conv2d(nc.Tensor(np.zeros((1, 4, 4))), nc.Tensor(np.zeros((1, 1, 3, 3))), 3)


class TestElementwise:
    def test_tanh_zero(self):
        assert not nc.elementwise(nc.Tensor(np.zeros(4)), "tanh").data.any()

    def test_sigmoid_half(self):
        np.testing.assert_array_equal(nc.elementwise(nc.Tensor(np.zeros(3)), "sigmoid").data, 0.5)

    def test_square(self):
        np.testing.assert_array_equal(nc.elementwise(nc.tensor([3.0, -2.0]), "square").data, [9, 4])

    def test_relu_subgradient_at_zero(self):
        x = nc.Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        with nc.Tape():
            nc.backward(nc.total(nc.relu(x)))
        np.testing.assert_array_equal(x.grad, [0, 0, 1])

    def test_const_forms(self):
        x = nc.tensor([1.0, 2.0])
        np.testing.assert_array_equal(nc.elementwise(x, "add-const", 1.5).data, [2.5, 3.5])
        np.testing.assert_array_equal(nc.elementwise(x, "mul-const", -2).data, [-2, -4])

    def test_binary_shape_mismatch(self):
        for fn in ("add", "mul", "sub"):
            with pytest.raises(DimensionError):
                nc.elementwise(nc.Tensor(np.zeros(3)), fn, nc.Tensor(np.zeros(4)))

    def test_sigmoid_extremes_finite(self):
        y = nc.sigmoid(nc.tensor([-1e4, 1e4])).data
        assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


class TestBackward:
    def test_sum_gives_ones(self):
        x = nc.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with nc.Tape():
            nc.backward(nc.total(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_at_three(self):
        x = nc.tensor([3.0], requires_grad=True)
        with nc.Tape():
            nc.backward(nc.total(nc.square(x)))
        assert x.grad[0] == 6.0

    def test_fan_out(self):
        y = nc.tensor([1.5], requires_grad=True)
        with nc.Tape():
            nc.backward(nc.total(nc.add(y, y)))
        assert y.grad[0] == 2.0

    def test_accumulates_across_calls(self):
        x = nc.tensor([2.0], requires_grad=True)
        for _ in range(2):
            with nc.Tape():
                nc.backward(nc.total(nc.square(x)))
        assert x.grad[0] == 8.0

    def test_non_scalar_rejected(self):
        x = nc.tensor([1.0, 2.0], requires_grad=True)
        with nc.Tape():
            y = nc.square(x)
            with pytest.raises(ContractError):
                nc.backward(y)

    def test_untaped_rejected(self):
        with pytest.raises(ContractError):
            nc.backward(nc.total(nc.tensor([1.0])))

    def test_tape_is_topological(self):
        x = nc.tensor([0.3, -0.2], requires_grad=True)
        with nc.Tape() as tape:
            y = nc.tanh(nc.mul(x, x))
            nc.total(nc.add(y, x))
        produced = set()
        for out, inputs, _ in tape.records:
            for inp in inputs:
                assert inp._tape is None or id(inp) in produced
            produced.add(id(out))

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        a, k = rng.normal(size=(2, 1, 8, 8)), rng.normal(size=(4, 1, 3, 3))
        grads = []
        for _ in range(2):
            kt = nc.Tensor(k.copy(), requires_grad=True)
            with nc.Tape():
                nc.backward(nc.mean(nc.square(nc.relu(nc.conv2d(nc.Tensor(a), kt, 2)))))
            grads.append(kt.grad.tobytes())
        assert grads[0] == grads[1]

    def test_no_tape_no_record(self):
        x = nc.tensor([1.0], requires_grad=True)
        y = nc.square(x)
        assert y._tape is None and not y.requires_grad


class TestGradCheck:
    def test_sum_of_squares(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        assert nc.grad_check(lambda t: nc.total(nc.square(t)), x) < 1e-6

    def test_constant(self):
        x = np.random.default_rng(1).normal(size=3)
        assert nc.grad_check(lambda t: nc.total(nc.mul_const(t, 0.0)), x) == 0.0

    def test_nonfinite_raises(self):
        with pytest.raises(EvaluationError):
            nc.grad_check(lambda t: nc.total(nc.div(nc.Tensor(np.ones(1)), t)), np.array([1e-5]), eps=1e-5)

    @pytest.mark.parametrize("seed", range(10))
    def test_every_primitive(self, seed):
        rng = np.random.default_rng(seed)
        for name, f, x in primitive_cases(rng):
            assert nc.grad_check(f, x) < 1e-4, name


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_tanh_gradient_matches_derivative(values):
    x = nc.Tensor(np.array(values), requires_grad=True)
    with nc.Tape():
        nc.backward(nc.total(nc.tanh(x)))
    np.testing.assert_allclose(x.grad, 1 - np.tanh(values) ** 2, rtol=1e-12)
