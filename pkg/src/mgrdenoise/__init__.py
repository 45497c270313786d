"""mgrdenoise: mask-guided convolutions for blind-spot self-supervised denoising.

A small numpy-based training system: four mask-aware convolution layers
(PConv, LBAM, GatedConv, MGRConv) with hand-wired backpropagation, a U-Net
that hosts them, blind-spot masking strategies, masked-MSE training, and
PSNR/SSIM evaluation. Hot inner loops run through a compiled extension when
available and fall back to pure numpy otherwise.
"""

from .engine import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
