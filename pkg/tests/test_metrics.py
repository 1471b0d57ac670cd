import numpy as np
import pytest

from pbrflow.errors import RejectedInput
from pbrflow.metrics import perceptual, psnr, rmse, ssim


@pytest.fixture
def img():
    return np.random.default_rng(0).uniform(0.0, 0.9, size=(64, 64, 3))


def test_identity_values(img):
    assert psnr(img, img) == 100.0
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    assert rmse(img, img) == 0.0
    assert perceptual(img, img) == 0.0


def test_constant_offset_closed_form(img):
    shifted = img + 0.1  # img < 0.9, so no clipping
    assert rmse(img, shifted) == pytest.approx(0.1, abs=1e-12)
    assert psnr(img, shifted) == pytest.approx(20.0, abs=1e-9)


def test_ssim_symmetric(img):
    other = np.random.default_rng(1).uniform(0.0, 1.0, size=img.shape)
    assert ssim(img, other) == pytest.approx(ssim(other, img), abs=1e-12)


def test_shape_mismatch_rejected(img):
    with pytest.raises(RejectedInput):
        psnr(img, img[:32])
    with pytest.raises(RejectedInput):
        ssim(img, img[..., :1])


def test_masked_metrics_ignore_background(img):
    other = img.copy()
    mask = np.zeros((64, 64, 1), dtype=bool)
    mask[:32] = True
    other[40:] = 0.0  # corrupt only outside the mask
    assert psnr(img, other, mask) == 100.0
    assert rmse(img, other, mask) == 0.0
    assert perceptual(img, other, mask) == 0.0


def test_masked_rmse_value():
    a = np.zeros((8, 8, 1))
    b = np.zeros((8, 8, 1))
    b[:4] = 0.2
    mask = np.zeros((8, 8, 1), dtype=bool)
    mask[:4] = True
    assert rmse(a, b, mask) == pytest.approx(0.2, abs=1e-12)


def test_empty_mask_rejected(img):
    with pytest.raises(RejectedInput):
        psnr(img, img, np.zeros((64, 64, 1), dtype=bool))


def test_rmse_bounded_for_unit_maps():
    a = np.zeros((16, 16, 1))
    b = np.ones((16, 16, 1))
    assert rmse(a, b) == 1.0


def test_perceptual_positive_for_different_images(img):
    other = np.random.default_rng(2).uniform(0.0, 1.0, size=img.shape)
    assert perceptual(img, other) > 0.0


def test_perceptual_deterministic(img):
    other = np.random.default_rng(3).uniform(0.0, 1.0, size=img.shape)
    assert perceptual(img, other) == perceptual(img, other)
