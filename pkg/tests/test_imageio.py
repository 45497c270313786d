import numpy as np
import numpy.testing as npt
import pytest

from mgrdenoise.engine.rng import make_rng
from mgrdenoise.imageio import ImageFormatError, list_images, load_image, save_image


def _random_quantized(seed, c, h, w):
    raw = make_rng(seed).integers(0, 256, size=(1, c, h, w), dtype=np.uint8)
    return raw.astype(np.float32) / 255.0


@pytest.mark.parametrize("channels,suffix", [(1, ".png"), (3, ".png"), (1, ".pgm")])
def test_roundtrip_exact_for_8bit_data(tmp_path, channels, suffix):
    img = _random_quantized(0, channels, 23, 31)
    p = tmp_path / f"im{suffix}"
    save_image(img, p)
    npt.assert_array_equal(load_image(p), img)


def test_double_roundtrip_stable(tmp_path):
    img = _random_quantized(1, 3, 16, 16)
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    save_image(img, a)
    save_image(load_image(a), b)
    npt.assert_array_equal(load_image(a), load_image(b))


def test_all_black_pgm_loads_as_zeros(tmp_path):
    p = tmp_path / "black.pgm"
    save_image(np.zeros((1, 1, 5, 7), np.float32), p)
    loaded = load_image(p)
    assert loaded.shape == (1, 1, 5, 7)
    npt.assert_array_equal(loaded, 0.0)


def test_pgm_with_comments_parses(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n3 2\n# another\n255\n" + bytes(6))
    assert load_image(p).shape == (1, 1, 2, 3)


def test_value_128_maps_to_128_over_255(tmp_path):
    p = tmp_path / "v.pgm"
    save_image(np.full((1, 1, 2, 2), 128 / 255, np.float32), p)
    npt.assert_allclose(load_image(p)[0, 0, 0, 0], 128 / 255)
    assert abs(load_image(p)[0, 0, 0, 0] - 0.50196) < 1e-5


def test_save_clamps_out_of_range(tmp_path):
    img = np.array([[[[-0.5, 1.5], [0.25, 0.75]]]], np.float32)
    p = tmp_path / "c.png"
    save_image(img, p)
    back = load_image(p)
    assert back[0, 0, 0, 0] == 0.0 and back[0, 0, 0, 1] == 1.0


def test_unsupported_png_mode_rejected(tmp_path):
    from PIL import Image
    p = tmp_path / "rgba.png"
    Image.new("RGBA", (4, 4)).save(p)
    with pytest.raises(ImageFormatError, match="mode"):
        load_image(p)


def test_16bit_pgm_rejected(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ImageFormatError, match="8-bit"):
        load_image(p)


def test_ascii_pgm_rejected(tmp_path):
    p = tmp_path / "ascii.pgm"
    p.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(ImageFormatError, match="P5"):
        load_image(p)


def test_unknown_extension_rejected(tmp_path):
    p = tmp_path / "x.bmp"
    p.write_bytes(b"BM")
    with pytest.raises(ImageFormatError, match="format"):
        load_image(p)
    with pytest.raises(ImageFormatError):
        save_image(np.zeros((1, 1, 2, 2), np.float32), tmp_path / "y.tiff")


def test_multichannel_pgm_rejected(tmp_path):
    with pytest.raises(ImageFormatError, match="grayscale"):
        save_image(np.zeros((1, 3, 2, 2), np.float32), tmp_path / "rgb.pgm")


def test_list_images_sorted(tmp_path):
    for name in ("b.png", "a.pgm", "c.txt"):
        if name.endswith(".txt"):
            (tmp_path / name).write_text("not an image")
        else:
            save_image(np.zeros((1, 1, 2, 2), np.float32), tmp_path / name)
    assert [p.name for p in list_images(tmp_path)] == ["a.pgm", "b.png"]
