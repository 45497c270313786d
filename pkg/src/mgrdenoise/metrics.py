"""PSNR and SSIM on [0, 1] images (peak = 1.0)."""

from dataclasses import dataclass, field

import numpy as np

from .engine import ops

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) over all elements, capped at 100 dB (identical inputs)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean(np.square(a.astype(np.float64) - b.astype(np.float64))))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return (win / win.sum()).astype(np.float64)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01,
    K2=0.03, dynamic range 1.0; evaluated on fully valid window positions and
    averaged over positions, channels, and batch."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    n, c, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)[None, None]
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    # one-channel-at-a-time filtering via the engine's conv (padding 0 = valid)
    x = a.astype(np.float64).reshape(n * c, 1, h, w)
    y = b.astype(np.float64).reshape(n * c, 1, h, w)
    filt = lambda t: ops.conv2d(t, win, padding=0)
    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass
class QualityReport:
    """Per-image PSNR/SSIM plus means, as written to evaluation CSVs."""

    image_ids: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, image_id: str, psnr_value: float, ssim_value: float):
        self.image_ids.append(image_id)
        self.psnr_db.append(psnr_value)
        self.ssim.append(ssim_value)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def to_csv_rows(self):
        rows = [("image_id", "psnr", "ssim")]
        for i, p, s in zip(self.image_ids, self.psnr_db, self.ssim):
            rows.append((i, f"{p:.4f}", f"{s:.6f}"))
        rows.append(("mean", f"{self.mean_psnr:.4f}", f"{self.mean_ssim:.6f}"))
        return rows
