"""Blind-spot sample generation and the masked MSE loss.

A BlindSpotSample pairs a manipulated input with a binary guide mask (1 =
untouched) and the regression target. The loss is supported only on
manipulated pixels (guide mask 0), which is what forces the network to
predict from neighbourhood context instead of copying its input.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class BlindSpotSample:
    manipulated: np.ndarray  # network input, (n, c, h, w)
    guide_mask: np.ndarray   # (n, 1, h, w), strictly 0/1, 1 = untouched
    target: np.ndarray       # regression target, same shape as manipulated


@dataclass
class MaskScheme:
    """Masking strategy configuration."""

    kind: str = "bernoulli_s2s"   # bernoulli_s2s | neighbor_n2v | drop_inpaint
    rate: float = 0.7             # drop probability (bernoulli / inpaint)
    n2v_fraction: float = 0.015   # manipulated pixels per image = ceil(frac * h * w)
    n2v_window: int = 2           # neighbour radius for replacement

    def validate(self):
        if self.kind not in ("bernoulli_s2s", "neighbor_n2v", "drop_inpaint"):
            raise ValueError(f"unknown mask scheme {self.kind!r}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError("rate must be in (0, 1)")
        if self.n2v_window < 1:
            raise ValueError("n2v_window must be >= 1")
        if not 0.0 < self.n2v_fraction < 1.0:
            raise ValueError("n2v_fraction must be in (0, 1)")


def sample_bernoulli(y: np.ndarray, rate: float, rng: np.random.Generator) -> BlindSpotSample:
    """Drop each pixel independently with probability `rate` (set to 0, mask 0).

    One spatial mask is shared across colour channels.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must be in (0, 1), got {rate}")
    n, _, h, w = y.shape
    keep = (rng.random((n, 1, h, w), dtype=np.float32) >= rate).astype(y.dtype)
    return BlindSpotSample(manipulated=y * keep, guide_mask=keep, target=y)


def sample_neighbor_replace(y: np.ndarray, count: int, window: int,
                            rng: np.random.Generator) -> BlindSpotSample:
    """Replace `count` distinct pixels per image with a uniformly chosen
    neighbour from the (2*window+1)^2 box (excluding the pixel itself, box
    clipped to image bounds); mask 0 at replaced positions."""
    n, _, h, w = y.shape
    if count >= h * w:
        raise ValueError(f"count {count} must be < h*w = {h * w}")
    if window < 1:
        raise ValueError("window must be >= 1")
    manipulated = y.copy()
    mask = np.ones((n, 1, h, w), dtype=y.dtype)
    for b in range(n):
        flat = rng.choice(h * w, size=count, replace=False)
        ys, xs = np.divmod(flat, w)
        for i, j in zip(ys, xs):
            y0, y1 = max(0, i - window), min(h - 1, i + window)
            x0, x1 = max(0, j - window), min(w - 1, j + window)
            ncand = (y1 - y0 + 1) * (x1 - x0 + 1) - 1
            pick = int(rng.integers(ncand))
            self_pos = (i - y0) * (x1 - x0 + 1) + (j - x0)
            if pick >= self_pos:
                pick += 1
            ni, nj = y0 + pick // (x1 - x0 + 1), x0 + pick % (x1 - x0 + 1)
            manipulated[b, :, i, j] = y[b, :, ni, nj]
            mask[b, 0, i, j] = 0
    return BlindSpotSample(manipulated=manipulated, guide_mask=mask, target=y)


def sample_drop_inpaint(x_clean: np.ndarray, ratio: float,
                        rng: np.random.Generator) -> BlindSpotSample:
    """Randomly drop pixels of a clean image (corruption for inpainting runs).

    Same mechanics as bernoulli sampling, but the target is the clean image
    and the training-loss convention inverts: the trainer supervises kept
    pixels (mask 1), since the dropped originals are unavailable when the
    corruption is treated as given. Evaluation still scores the full image.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n, _, h, w = x_clean.shape
    keep = (rng.random((n, 1, h, w), dtype=np.float32) >= ratio).astype(x_clean.dtype)
    return BlindSpotSample(manipulated=x_clean * keep, guide_mask=keep, target=x_clean)


def make_sample(y: np.ndarray, scheme: MaskScheme, rng: np.random.Generator) -> BlindSpotSample:
    """Dispatch on the scheme kind."""
    if scheme.kind == "bernoulli_s2s":
        return sample_bernoulli(y, scheme.rate, rng)
    if scheme.kind == "neighbor_n2v":
        h, w = y.shape[2], y.shape[3]
        count = int(np.ceil(scheme.n2v_fraction * h * w))
        return sample_neighbor_replace(y, count, scheme.n2v_window, rng)
    if scheme.kind == "drop_inpaint":
        return sample_drop_inpaint(y, scheme.rate, rng)
    raise ValueError(f"unknown mask scheme {scheme.kind!r}")


def masked_mse(prediction: np.ndarray, target: np.ndarray, guide_mask: np.ndarray):
    """Mean squared error over manipulated pixels only.

    loss = sum((1-M) * (pred-target)^2) / max(1, #manipulated elements); the
    returned gradient w.r.t. the prediction is exactly zero wherever M == 1.
    Returns (loss, grad).
    """
    if prediction.shape != target.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs {target.shape}")
    weight = (1.0 - guide_mask).astype(prediction.dtype)
    diff = (prediction - target) * weight  # broadcast over channels
    count = float(weight.sum()) * (prediction.shape[1] / guide_mask.shape[1])
    if count == 0:
        log.warning("masked_mse: guide mask is all ones, no training signal")
    denom = max(1.0, count)
    loss = float(np.square(diff, dtype=np.float64).sum() / denom)
    grad = diff * np.asarray(2.0 / denom, dtype=prediction.dtype)
    return loss, grad
