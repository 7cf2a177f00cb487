import numpy as np
import pytest

from clickmask.errors import ClickmaskError, ShapeError
from clickmask.numeric import Tensor, binary_cross_entropy, focal_loss


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_focal_gamma_zero_equals_bce():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((13, 11)) * 3
    t = (rng.random((13, 11)) < 0.4).astype(np.float64)
    f = focal_loss(_t(z), t, gamma=0.0).item()
    b = binary_cross_entropy(_t(z), t).item()
    assert abs(f - b) <= 1e-12


def test_focal_single_pixel_hand_value():
    # logit 0 on a positive pixel: p=0.5, so (1-p)^2 * -log(p) = 0.25*ln 2
    got = focal_loss(_t([[0.0]]), np.array([[1.0]]), gamma=2.0).item()
    np.testing.assert_allclose(got, 0.25 * np.log(2.0), rtol=1e-12)
    # same value by symmetry for a negative pixel
    got = focal_loss(_t([[0.0]]), np.array([[0.0]]), gamma=2.0).item()
    np.testing.assert_allclose(got, 0.25 * np.log(2.0), rtol=1e-12)


def test_bce_hand_values():
    got = binary_cross_entropy(_t([[0.0]]), np.array([[1.0]])).item()
    np.testing.assert_allclose(got, np.log(2.0), rtol=1e-12)
    got = binary_cross_entropy(_t([[2.0]]), np.array([[1.0]])).item()
    np.testing.assert_allclose(got, np.log1p(np.exp(-2.0)), rtol=1e-12)
    got = binary_cross_entropy(_t([[2.0]]), np.array([[0.0]])).item()
    np.testing.assert_allclose(got, 2.0 + np.log1p(np.exp(-2.0)), rtol=1e-12)


def test_confident_correct_prediction_costs_nothing():
    z = np.array([[40.0, -40.0]])
    t = np.array([[1.0, 0.0]])
    assert focal_loss(_t(z), t).item() < 1e-30
    assert binary_cross_entropy(_t(z), t).item() < 1e-15


def test_losses_finite_for_extreme_logits():
    z = np.array([[1e4, -1e4]])
    t = np.array([[0.0, 1.0]])
    assert np.isfinite(focal_loss(_t(z), t).item())
    assert np.isfinite(binary_cross_entropy(_t(z), t).item())


def test_focal_downweights_easy_pixels_vs_bce():
    # gamma>0 shrinks well-classified pixels far more than hard ones
    easy = focal_loss(_t([[3.0]]), np.array([[1.0]]), gamma=2.0).item()
    easy_bce = binary_cross_entropy(_t([[3.0]]), np.array([[1.0]])).item()
    hard = focal_loss(_t([[-3.0]]), np.array([[1.0]]), gamma=2.0).item()
    hard_bce = binary_cross_entropy(_t([[-3.0]]), np.array([[1.0]])).item()
    assert easy / easy_bce < 0.01
    assert hard / hard_bce > 0.8


def test_loss_is_mean_over_pixels():
    z = np.zeros((2, 8))
    t = np.ones((2, 8))
    got = focal_loss(_t(z), t, gamma=2.0).item()
    np.testing.assert_allclose(got, 0.25 * np.log(2.0), rtol=1e-12)


def test_gradient_descends_the_loss():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((4, 4))
    t = (rng.random((4, 4)) < 0.5).astype(np.float64)
    zt = _t(z)
    loss = focal_loss(zt, t)
    loss.backward()
    stepped = focal_loss(_t(z - 0.1 * zt.grad), t).item()
    assert stepped < loss.item()


def test_target_validation():
    with pytest.raises(ShapeError):
        focal_loss(_t(np.zeros((2, 2))), np.zeros((2, 3)))
    with pytest.raises(ClickmaskError):
        focal_loss(_t(np.zeros((2, 2))), np.full((2, 2), 0.5))
    with pytest.raises(ClickmaskError):
        binary_cross_entropy(_t(np.zeros(3)), np.array([0.0, 1.0, 2.0]))
