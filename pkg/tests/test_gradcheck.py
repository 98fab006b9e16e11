import numpy as np

from lreid import tensor as T
from lreid.gradcheck import check_gradients, finite_difference, run_suite
from lreid.tensor import Tensor


def test_default_suite_passes():
    results = run_suite(seeds=(0, 1))
    assert len(results) == 9
    assert all(r.passed for r in results)
    assert max(r.max_rel_error for r in results) < 1e-4


def test_suite_covers_s3_configuration():
    results = run_suite(aux_tokens=3, seeds=(0,))
    assert all(r.passed for r in results)


def test_finite_difference_on_known_function():
    T.set_default_dtype("float64")
    try:
        x = Tensor([2.0, -1.0], requires_grad=True)
        (g,) = finite_difference(lambda: T.sum_(T.mul(x, T.mul(x, x))), [x])
        np.testing.assert_allclose(g, 3.0 * x.data**2, atol=1e-8)
    finally:
        T.set_default_dtype("float32")


def _broken_scale(t):
    """Op with a deliberately wrong backward rule (claims d(2x)/dx = 3)."""
    from lreid.tensor import _make

    def backward(g):
        return (3.0 * g,)

    return _make(2.0 * t.data, (t,), backward, "broken_scale")


def test_corrupted_gradient_is_reported_by_name():
    def builder(rng, s):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        return lambda: T.sum_(_broken_scale(x)), [x]

    results = run_suite(scenarios=[("sabotaged", builder)], seeds=(0,))
    assert len(results) == 1
    assert results[0].name == "sabotaged"
    assert not results[0].passed
    assert results[0].max_rel_error > 0.1


def test_check_gradients_accepts_healthy_op():
    T.set_default_dtype("float64")
    try:
        x = Tensor(np.random.default_rng(0).normal(size=(4,)), requires_grad=True)
        assert check_gradients(lambda: T.sum_(T.exp(x)), [x]) < 1e-8
    finally:
        T.set_default_dtype("float32")
