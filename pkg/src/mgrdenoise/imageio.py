"""8-bit image I/O: PNG (via Pillow) and binary PGM (P5, hand-rolled).

Pixels load as (1, c, h, w) float32 in [0, 1] (v / 255); saving clamps and
quantizes with round(v * 255), so 8-bit data round-trips exactly.
"""

from pathlib import Path

import numpy as np
from PIL import Image

SUPPORTED_SUFFIXES = (".png", ".pgm")


class ImageFormatError(ValueError):
    """Unsupported image format, mode, or bit depth."""


def _load_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: only binary (P5) PGM is supported")
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    i += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM (maxval 255) supported, got {maxval}")
    raster = data[i:i + width * height]
    if len(raster) != width * height:
        raise ImageFormatError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(1, 1, height, width)


def _save_pgm(path: Path, pixels8: np.ndarray):
    _, c, h, w = pixels8.shape
    if c != 1:
        raise ImageFormatError("PGM holds grayscale only; save multichannel images as PNG")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels8[0, 0].tobytes())


def load_image(path) -> np.ndarray:
    """Load an 8-bit PNG or PGM as (1, c, h, w) float32 in [0, 1], c in {1, 3}."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        arr = _load_pgm(path)
    elif path.suffix.lower() == ".png":
        img = Image.open(path)
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.uint8)[None, None]
        elif img.mode == "RGB":
            arr = np.asarray(img, dtype=np.uint8).transpose(2, 0, 1)[None]
        else:
            raise ImageFormatError(
                f"{path}: unsupported PNG mode {img.mode!r} (need 8-bit L or RGB)")
    else:
        raise ImageFormatError(f"{path}: unsupported format (expected .png or .pgm)")
    return arr.astype(np.float32) / 255.0


def save_image(pixels: np.ndarray, path):
    """Save (1, c, h, w) [0, 1] data as PNG or PGM (clamped, round(v*255))."""
    path = Path(path)
    if pixels.ndim != 4 or pixels.shape[0] != 1 or pixels.shape[1] not in (1, 3):
        raise ValueError(f"expected (1, 1|3, h, w) image tensor, got {pixels.shape}")
    q = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        _save_pgm(path, q)
    elif path.suffix.lower() == ".png":
        if q.shape[1] == 1:
            Image.fromarray(q[0, 0], mode="L").save(path)
        else:
            Image.fromarray(q[0].transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise ImageFormatError(f"{path}: unsupported format (expected .png or .pgm)")


def list_images(directory) -> list:
    """Sorted image paths directly inside a directory."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in SUPPORTED_SUFFIXES)
