import numpy as np
import pytest

from lreid import tensor as T
from lreid.fusion import integrate, orthogonality_loss
from lreid.tensor import Tensor


@pytest.fixture(autouse=True)
def float64_mode():
    T.set_default_dtype("float64")
    yield
    T.set_default_dtype("float32")


def rows(*vectors):
    return Tensor(np.array(vectors), requires_grad=True)


def test_orthogonal_pair_scores_zero():
    loss = orthogonality_loss([rows([1.0, 0.0]), rows([0.0, 1.0])])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_identical_pair_scores_one():
    loss = orthogonality_loss([rows([1.0, 1.0]), rows([1.0, 1.0])])
    assert loss.item() == pytest.approx(1.0)


def test_three_auxiliaries_mean_over_pairs():
    a1 = rows([1.0, 0.0])
    a2 = rows([0.0, 1.0])
    a3 = rows([1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)])
    # pairs: (a1,a2)=0, (a1,a3)=sqrt(2)/2, (a2,a3)=sqrt(2)/2 -> mean 0.4714
    loss = orthogonality_loss([a1, a2, a3])
    assert loss.item() == pytest.approx(0.4714, abs=1e-4)


def test_fewer_than_two_auxiliaries_scores_zero():
    assert orthogonality_loss([]).item() == 0.0
    assert orthogonality_loss([rows([1.0, 2.0])]).item() == 0.0


def test_scale_invariance():
    rng = np.random.default_rng(0)
    a1 = rng.normal(size=(5, 8))
    a2 = rng.normal(size=(5, 8))
    base = orthogonality_loss([Tensor(a1), Tensor(a2)]).item()
    for scale in (0.01, 3.0, 250.0):
        scaled = orthogonality_loss([Tensor(a1 * scale), Tensor(a2)]).item()
        assert scaled == pytest.approx(base, rel=1e-10)


def test_anti_parallel_penalized():
    loss = orthogonality_loss([rows([1.0, 0.0]), rows([-1.0, 0.0])])
    assert loss.item() == pytest.approx(1.0)


def test_zero_norm_auxiliary_warns_and_counts_zero():
    with pytest.warns(UserWarning, match="zero-norm"):
        loss = orthogonality_loss([rows([0.0, 0.0]), rows([1.0, 0.0])])
    assert loss.item() == 0.0


def test_integrate_parallel_auxiliaries_contribute_nothing():
    p = rows([1.0, 2.0])
    fused, weights = integrate(p, [rows([2.0, 4.0]), rows([0.5, 1.0])])
    np.testing.assert_allclose(fused.data, p.data, atol=1e-13)
    np.testing.assert_allclose(weights, 1.0, atol=1e-13)


def test_integrate_orthogonal_full_contribution():
    fused, weights = integrate(rows([1.0, 0.0]), [rows([0.0, 1.0])])
    np.testing.assert_allclose(fused.data, [[1.0, 1.0]])
    np.testing.assert_allclose(weights, [[0.0]])


def test_integrate_derived_example():
    # P=(1,0), A1=(0,2), A2=(-1,0): w=(0,-1), fused = (1,0)+(0,2)+2*(-1,0) = (-1,2)
    fused, weights = integrate(rows([1.0, 0.0]), [rows([0.0, 2.0]), rows([-1.0, 0.0])])
    np.testing.assert_allclose(fused.data, [[-1.0, 2.0]], atol=1e-13)
    np.testing.assert_allclose(weights[:, 0], [0.0, -1.0], atol=1e-13)


def test_integrate_endpoint_identities_exact():
    rng = np.random.default_rng(1)
    p_vals = rng.normal(size=(6, 16))
    # w = 1 for every auxiliary: fused equals the primary to machine precision
    fused, _ = integrate(Tensor(p_vals), [Tensor(p_vals * 2.0), Tensor(p_vals * 0.25)])
    np.testing.assert_allclose(fused.data, p_vals, atol=1e-13)
    # w = 0: fused equals primary plus the sum of auxiliaries, exactly
    a_vals = []
    for _ in range(2):
        a = rng.normal(size=(6, 16))
        a -= (a * p_vals).sum(axis=1, keepdims=True) * p_vals / (p_vals * p_vals).sum(axis=1, keepdims=True)
        a_vals.append(a)
    # exact orthogonalization in floats is approximate; force exact-zero dots instead
    half = 8
    p_exact = np.concatenate([rng.normal(size=(6, half)), np.zeros((6, half))], axis=1)
    a_exact = [np.concatenate([np.zeros((6, half)), rng.normal(size=(6, half))], axis=1) for _ in range(2)]
    fused, weights = integrate(Tensor(p_exact), [Tensor(a) for a in a_exact])
    np.testing.assert_array_equal(weights, 0.0)
    np.testing.assert_array_equal(fused.data, p_exact + a_exact[0] + a_exact[1])


def test_integrate_zero_norm_primary_warns_additive_fallback():
    with pytest.warns(UserWarning, match="zero-norm"):
        fused, weights = integrate(rows([0.0, 0.0]), [rows([1.0, 2.0])])
    np.testing.assert_array_equal(weights, 0.0)
    np.testing.assert_array_equal(fused.data, [[1.0, 2.0]])


def test_integrate_clamp_limits_weights():
    p = rows([1.0, 0.0])
    fused, _ = integrate(p, [rows([-3.0, 0.0])], clamp_weights=True)
    # cosine -1 clamps to 0, so the contribution is 1 * A instead of 2 * A
    np.testing.assert_allclose(fused.data, [[-2.0, 0.0]])


def test_integrate_gradients_flow_through_weights():
    rng = np.random.default_rng(2)
    p = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    aux = [Tensor(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(2)]
    fused, _ = integrate(p, aux)
    loss = T.sum_(T.mul(fused, fused))
    grads = T.gradient_of(loss, [p] + aux)
    for leaf in [p] + aux:
        assert np.linalg.norm(grads[leaf]) > 0
