import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glyphdiff.errors import ContractError
from glyphdiff.evalkit.metrics import mse, psnr, ssim

imgs = arrays(
    dtype=np.float64,
    shape=(16, 16),
    elements=st.floats(0, 1, allow_nan=False, allow_infinity=False),
)


class TestMse:
    def test_identity_zero(self):
        x = np.random.default_rng(0).random((8, 8, 3))
        assert mse(x, x) == 0.0

    def test_constant_quarter(self):
        a = np.full((3, 3), 0.25)
        b = np.full((3, 3), 0.75)
        assert mse(a, b) == pytest.approx(0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            mse(np.zeros((2, 2)), np.zeros((3, 3)))


class TestPsnr:
    def test_twenty_db(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 0.1)
        assert psnr(a, b) == pytest.approx(20.0)

    def test_identical_is_infinite(self):
        x = np.ones((4, 4))
        assert psnr(x, x) == math.inf

    @given(imgs, imgs)
    @settings(max_examples=30, deadline=None)
    def test_cross_identity_with_mse(self, a, b):
        err = mse(a, b)
        if err > 0:
            assert psnr(a, b) == pytest.approx(10 * math.log10(1.0 / err), rel=1e-9)


class TestSsim:
    def test_identity_one(self):
        x = np.random.default_rng(1).random((16, 16, 3))
        assert ssim(x, x) == pytest.approx(1.0)

    @given(imgs, imgs)
    @settings(max_examples=20, deadline=None)
    def test_symmetry(self, a, b):
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_contrast_difference_lowers_score(self):
        rng = np.random.default_rng(3)
        a = rng.random((16, 16))
        assert ssim(a, np.clip(a + 0.3, 0, 1)) < 1.0

    def test_too_small_rejected(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((4, 4)), np.zeros((4, 4)))
