import numpy as np
import pytest
from skimage.metrics import structural_similarity

from lfmdt.errors import DimensionError
from lfmdt.lightfield import LightField
from lfmdt.metrics import PSNR_CAP, gaussian_window, psnr_y, ssim_plane, ssim_y


def field(arr):
    return LightField(np.asarray(arr, dtype=np.float64))


class TestPsnr:
    def test_identical_is_capped(self):
        x = field(np.random.default_rng(0).uniform(size=(2, 2, 8, 8, 1)))
        assert psnr_y(x, x) == PSNR_CAP

    def test_known_mse(self):
        # constant error 0.1 -> mse 0.01 -> 20 dB
        a = np.full((1, 1, 16, 16, 1), 0.5)
        assert psnr_y(field(a + 0.1), field(a)) == pytest.approx(20.0, abs=1e-9)

    def test_averaged_per_sai(self):
        gt = np.full((1, 2, 8, 8, 1), 0.5)
        pred = gt.copy()
        pred[0, 0] += 0.1
        pred[0, 1] += 0.01
        assert psnr_y(field(pred), field(gt)) == pytest.approx((20.0 + 40.0) / 2, abs=1e-9)

    def test_inputs_are_clamped(self):
        gt = np.full((1, 1, 4, 4, 1), 1.0)
        assert psnr_y(field(gt + 0.5), field(gt)) == PSNR_CAP

    def test_multichannel_rejected(self):
        x = field(np.zeros((1, 1, 4, 4, 3)))
        with pytest.raises(DimensionError):
            psnr_y(x, x)


class TestSsim:
    def test_identical_is_one(self):
        x = np.random.default_rng(1).uniform(size=(24, 24))
        assert ssim_plane(x, x) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_scikit_image(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=(32, 40))
        b = np.clip(a + rng.normal(scale=0.1, size=a.shape), 0, 1)
        ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
        assert ssim_plane(a, b) == pytest.approx(ref, abs=1e-6)

    def test_inverted_image_is_dissimilar(self):
        x = np.random.default_rng(2).uniform(size=(32, 32))
        assert ssim_plane(x, 1 - x) < 0.1

    def test_window_is_normalised(self):
        g = gaussian_window()
        assert g.size == 11 and g.sum() == pytest.approx(1.0)

    def test_small_images_use_smaller_window(self):
        x = np.random.default_rng(3).uniform(size=(6, 6))
        assert ssim_plane(x, x) == pytest.approx(1.0)

    def test_field_average(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(size=(2, 1, 16, 16, 1))
        pred = gt.copy()
        pred[1, 0] = np.clip(pred[1, 0] + 0.2, 0, 1)
        expected = (1.0 + ssim_plane(pred[1, 0, :, :, 0], gt[1, 0, :, :, 0])) / 2
        assert ssim_y(field(pred), field(gt)) == pytest.approx(expected)
