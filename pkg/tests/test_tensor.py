import numpy as np
import pytest

from lreid import tensor as T
from lreid.gradcheck import check_gradients
from lreid.tensor import Tensor


@pytest.fixture(autouse=True)
def float64_mode():
    T.set_default_dtype("float64")
    yield
    T.set_default_dtype("float32")


def leaf(rng, shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_polynomial_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = T.sum_(T.mul(x, x))
    np.testing.assert_allclose(T.gradient_of(loss, [x])[x], [2.0, 4.0, 6.0])


def test_constant_loss_gives_zero_gradients():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = Tensor(5.0)
    g = T.gradient_of(loss, [x])
    np.testing.assert_array_equal(g[x], np.zeros(2))


def test_unreachable_leaf_gets_zeros():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    loss = T.sum_(T.mul(x, x))
    g = T.gradient_of(loss, [x, y])
    assert g[y].shape == (2,)
    np.testing.assert_array_equal(g[y], 0.0)


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        T.gradient_of(T.mul(x, x), [x])


def test_reused_node_accumulates():
    x = Tensor([3.0], requires_grad=True)
    y = T.mul(x, 2.0)
    loss = T.sum_(T.add(y, y))
    np.testing.assert_allclose(T.gradient_of(loss, [x])[x], [4.0])


def test_gradient_linearity():
    rng = np.random.default_rng(0)
    x = leaf(rng, (4, 3))

    def l1():
        return T.sum_(T.mul(x, x))

    def l2():
        return T.sum_(T.exp(T.mul(x, 0.3)))

    a, b = 0.7, -1.3
    combined = T.add(T.mul(l1(), a), T.mul(l2(), b))
    g_combined = T.gradient_of(combined, [x])[x]
    g1 = T.gradient_of(l1(), [x])[x]
    g2 = T.gradient_of(l2(), [x])[x]
    np.testing.assert_allclose(g_combined, a * g1 + b * g2, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_ops_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = leaf(rng, (3, 4))
    b = leaf(rng, (3, 4))

    def fn():
        mix = T.add(T.mul(a, b), T.div(a, T.add(T.mul(b, b), 1.0)))
        return T.sum_(T.mul(T.tanh(mix), T.exp(T.mul(mix, 0.1))))

    assert check_gradients(fn, [a, b]) < 1e-6


def test_broadcasting_backward():
    rng = np.random.default_rng(1)
    a = leaf(rng, (2, 3, 4))
    bias = leaf(rng, (4,))

    def fn():
        return T.sum_(T.mul(T.add(a, bias), T.add(a, bias)))

    assert check_gradients(fn, [a, bias]) < 1e-6


def test_matmul_batched_backward():
    rng = np.random.default_rng(2)
    h = leaf(rng, (2, 3, 5))
    w = leaf(rng, (5, 4))

    def fn():
        return T.sum_(T.mul(T.matmul(h, w), T.matmul(h, w)))

    assert check_gradients(fn, [h, w]) < 1e-6


def test_matmul_requires_2d():
    with pytest.raises(ValueError, match="2-D"):
        T.matmul(Tensor([1.0, 2.0]), Tensor([[1.0], [2.0]]))


def test_shape_ops_backward():
    rng = np.random.default_rng(3)
    a = leaf(rng, (2, 3, 4))

    def fn():
        x = T.transpose(a, (0, 2, 1))
        x = T.reshape(x, (2, 12))
        x = T.concat([x, T.mul(x, 2.0)], axis=1)
        return T.sum_(T.mul(x[:, 3:10], x[:, 3:10]))

    assert check_gradients(fn, [a]) < 1e-6


def test_take_accumulates_duplicates():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(3, 2), requires_grad=True)
    picked = T.take(x, np.array([0, 0, 2]))
    loss = T.sum_(picked)
    g = T.gradient_of(loss, [x])[x]
    np.testing.assert_array_equal(g, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_log_softmax_matches_definition_and_gradient():
    rng = np.random.default_rng(4)
    z = leaf(rng, (3, 5))
    out = T.log_softmax(z)
    manual = z.data - np.log(np.exp(z.data).sum(axis=1, keepdims=True))
    np.testing.assert_allclose(out.data, manual, atol=1e-12)

    def fn():
        return T.sum_(T.mul(T.log_softmax(z), Tensor(np.ones((3, 5)) / 7.0)))

    assert check_gradients(fn, [z]) < 1e-6


def test_sqrt_zero_subgradient_is_finite():
    x = Tensor([0.0, 4.0], requires_grad=True)
    loss = T.sum_(T.sqrt(x))
    g = T.gradient_of(loss, [x])[x]
    assert g[0] == 0.0
    assert g[1] == pytest.approx(0.25)


def test_gelu_and_layer_norm_gradients():
    rng = np.random.default_rng(5)
    x = leaf(rng, (2, 6))
    gamma = leaf(rng, (6,))
    beta = leaf(rng, (6,))

    def fn():
        return T.sum_(T.gelu(T.layer_norm(x, gamma, beta)))

    assert check_gradients(fn, [x, gamma, beta]) < 1e-6


def test_deep_chain_is_linear_time():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(2000):
        y = T.add(T.mul(y, 0.999), 0.001)
    g = T.gradient_of(T.sum_(y), [x])[x]
    assert g[0] == pytest.approx(0.999 ** 2000)


def test_no_grad_suppresses_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        y = T.sum_(T.mul(x, x))
    assert not y.requires_grad
    np.testing.assert_array_equal(T.gradient_of(y, [x])[x], 0.0)


def test_sgd_with_zero_momentum_is_plain_descent():
    from lreid.optim import SgdMomentum

    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = SgdMomentum([p], base_lr=0.1, momentum=0.0, total_steps=10, schedule="none")
    opt.step({p: np.array([0.5, 0.5])})
    np.testing.assert_allclose(p.data, [0.95, -2.05])


@pytest.mark.filterwarnings("ignore:invalid value")
def test_debug_nan_names_the_op():
    T.set_debug_nan(True)
    try:
        x = Tensor([1.0, -1.0], requires_grad=True)
        with pytest.raises(FloatingPointError, match="log"):
            T.log(x)
    finally:
        T.set_debug_nan(False)


def test_precision_toggle_controls_storage():
    T.set_default_dtype("float32")
    assert Tensor([1.0]).dtype == np.float32
    T.set_default_dtype("float64")
    assert Tensor([1.0]).dtype == np.float64
