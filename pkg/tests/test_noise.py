import numpy as np
import numpy.testing as npt
import pytest

from mgrdenoise.engine.rng import make_rng
from mgrdenoise.metrics import psnr
from mgrdenoise.noise import NoiseSpec, corrupt

from conftest import make_test_image


def test_sigma25_psnr_anchor():
    # closed form: 20*log10(255/25) = 20.172 dB, plus sampling error
    x = np.full((1, 1, 256, 256), 0.5, np.float32)
    y = corrupt(x, NoiseSpec(sigma=25.0), make_rng(0))
    assert abs(psnr(y, x) - 20.172) < 0.3


def test_vanishing_sigma_is_near_identity():
    x = make_test_image(1, size=64)
    y = corrupt(x, NoiseSpec(sigma=1e-6), make_rng(1))
    assert np.abs(y - x).max() < 1e-5


def test_empirical_std_matches_sigma():
    x = np.zeros((1, 1, 1000, 1000), np.float32)
    y = corrupt(x, NoiseSpec(sigma=25.0), make_rng(2))
    assert abs(float((y - x).std()) * 255.0 - 25.0) < 0.1


def test_noise_is_zero_mean_per_pixel():
    # E(y) == x: mean over 10^4 draws of a small tile, within 4*sigma/sqrt(n)
    x = make_test_image(2, size=8)
    rng = make_rng(3)
    spec = NoiseSpec(sigma=25.0)
    acc = np.zeros_like(x, dtype=np.float64)
    n = 10_000
    for _ in range(n):
        acc += corrupt(x, spec, rng) - x
    bound = 4 * (25.0 / 255.0) / np.sqrt(n)
    assert np.abs(acc / n).max() < bound


def test_lag1_spatial_autocorrelation_negligible():
    x = np.zeros((1, 1, 512, 512), np.float32)
    n = (corrupt(x, NoiseSpec(sigma=25.0), make_rng(4)) - x)[0, 0]
    n = n - n.mean()
    for a, b in (((slice(None), slice(1, None)), (slice(None), slice(None, -1))),
                 ((slice(1, None), slice(None)), (slice(None, -1), slice(None)))):
        corr = float((n[a] * n[b]).mean() / n.var())
        assert abs(corr) < 0.01


def test_output_not_clipped():
    x = np.zeros((1, 1, 128, 128), np.float32)  # all-black: noise must go negative
    y = corrupt(x, NoiseSpec(sigma=50.0), make_rng(5))
    assert (y < 0).any()


def test_range_kind_draws_one_sigma_per_image():
    x = np.zeros((64, 1, 64, 64), np.float32)
    y = corrupt(x, NoiseSpec(kind="gauss_range", sigma_lo=5.0, sigma_hi=50.0), make_rng(6))
    stds = (y - x).std(axis=(1, 2, 3)) * 255.0
    assert stds.min() < 15.0 and stds.max() > 35.0  # spread across the range
    assert (stds > 3.0).all() and (stds < 60.0).all()


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(sigma=-1.0).validate()
    with pytest.raises(ValueError):
        NoiseSpec(kind="gauss_range", sigma_lo=10.0, sigma_hi=5.0).validate()
    with pytest.raises(ValueError):
        NoiseSpec(kind="poisson").validate()
