import numpy as np
import pytest

from mgrdenoise.engine.rng import make_rng


def make_test_image(seed, size=96, channels=1):
    """Deterministic natural-ish test image: gradient + blobs + fine texture."""
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    chans = []
    for c in range(channels):
        img = 0.25 + 0.45 * xx + 0.15 * np.sin(2 * np.pi * (2 + c) * yy)
        for _ in range(8):
            cy, cx, r, amp, sgn = rng.random(5)
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            img += (1 if sgn > 0.4 else -1) * amp * 0.3 * np.exp(-d2 / (0.01 + 0.04 * r))
        img += 0.05 * np.sin(40 * xx + c) * np.sin(37 * yy)
        img = (img - img.min()) / (img.max() - img.min())
        chans.append(img)
    return np.stack(chans)[None].astype(np.float32)


def make_portrait_like(seed=808, size=256):
    """Smooth random field with the first/second moments of the classic Set12
    image 08 (mean ~0.49, std ~0.18), for the pixel-dropping PSNR anchor."""
    rng = make_rng(seed)
    low = rng.standard_normal((size // 8, size // 8))
    img = np.kron(low, np.ones((8, 8)))
    k = np.outer(*(np.hanning(17),) * 2)
    k /= k.sum()
    from scipy.signal import convolve2d  # oracle-side smoothing only

    img = convolve2d(img, k, mode="same", boundary="symm")
    img = (img - img.mean()) / img.std()
    img = 0.49 + 0.18 * img
    return np.clip(img, 0.0, 1.0).astype(np.float32)[None, None]


@pytest.fixture
def rng():
    return make_rng(20240817)
