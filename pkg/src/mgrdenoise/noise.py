"""Synthetic Gaussian corruption in the additive model y = x + n."""

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseSpec:
    """Gaussian noise on the 8-bit scale (sigma 25 means N(0, (25/255)^2) on [0,1] data).

    kind "gauss_fixed" uses `sigma`; "gauss_range" draws one sigma per image
    uniformly from [sigma_lo, sigma_hi].
    """

    kind: str = "gauss_fixed"
    sigma: float = 25.0
    sigma_lo: float = 5.0
    sigma_hi: float = 50.0

    def validate(self):
        if self.kind not in ("gauss_fixed", "gauss_range"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gauss_fixed" and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "gauss_range" and not 0 < self.sigma_lo <= self.sigma_hi:
            raise ValueError("need 0 < sigma_lo <= sigma_hi")


def corrupt(x: np.ndarray, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise to an image batch in [0, 1].

    The output is deliberately NOT clipped: clipping would bias the noise mean
    and break the zero-mean assumption the blind-spot loss relies on. Clamp to
    [0, 1] only at export time.
    """
    spec.validate()
    n = x.shape[0]
    if spec.kind == "gauss_fixed":
        sigma = np.full((n, 1, 1, 1), spec.sigma, dtype=x.dtype)
    else:
        sigma = rng.uniform(spec.sigma_lo, spec.sigma_hi, size=(n, 1, 1, 1)).astype(x.dtype)
    noise = rng.standard_normal(x.shape, dtype=np.float32).astype(x.dtype, copy=False)
    return x + noise * (sigma / 255.0)
