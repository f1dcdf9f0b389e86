import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adapt import tensor as T
from adapt.csp import CSPHead, SignalNormalizer, csp_loss
from adapt.tensor import ContractError, Tensor


def test_hand_computed_example():
    s = np.array([[1.0], [2.0], [3.0]])
    assert abs(csp_loss(s, Tensor(np.array([[2.0], [4.0]]))).item() - 0.5) < 1e-12
    assert abs(csp_loss([1.0, 2.0, 3.0], Tensor(np.array([2.0, 4.0]))).item() - 0.5) < 1e-12


def test_exact_prediction_is_zero(rng):
    s = rng.normal(size=(6, 2))
    assert csp_loss(s, Tensor(s[1:])).item() == 0.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-10, 10)), arrays(np.float64, (4, 2), elements=st.floats(-10, 10)))
def test_doubling_residuals_quadruples_loss(s, p):
    base = csp_loss(s, Tensor(p)).item()
    doubled = csp_loss(s, Tensor(s[1:] + 2 * (p - s[1:]))).item()
    assert abs(doubled - 4 * base) <= 1e-9 * max(1.0, base)


def test_gradient_formula(rng):
    s = rng.normal(size=(5, 1))
    p = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    T.backward(csp_loss(s, p))
    np.testing.assert_allclose(p.grad, 2 * (p.data - s[1:]) / 4, atol=1e-14)


def test_length_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        csp_loss(np.zeros((4, 1)), Tensor(np.zeros((4, 1))))


@pytest.mark.parametrize("n", [1, 2])
def test_head_output_geometry(rng, n):
    head = CSPHead(64, n, rng, d=16, depth=1, heads=2)
    out = head(Tensor(rng.normal(size=(2, 16, 2, 2, 64))))
    assert out.shape == (2, 31, n)


def test_zero_readout_gives_zero_predictions(rng):
    head = CSPHead(8, 2, rng, d=16, depth=1, heads=2)
    head.readout.weight.data[:] = 0.0
    head.readout.bias.data[:] = 0.0
    assert (head(Tensor(rng.normal(size=(1, 4, 1, 1, 8)))).data == 0.0).all()


def test_normalizer_round_trip(rng):
    s = rng.normal(5.0, 3.0, size=(50, 2))
    norm = SignalNormalizer.fit(s)
    z = norm.normalize(s)
    np.testing.assert_allclose(z.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(norm.denormalize(z), s)
    assert SignalNormalizer.from_dict(norm.to_dict()).to_dict() == norm.to_dict()
