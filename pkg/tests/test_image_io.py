import numpy as np
import pytest
import torch
from PIL import Image

from errors import DomainError, FileError
from image_io import decode_float_tiff, encode_float_tiff, load_float_tiff, load_image, save_float_tiff


@pytest.mark.parametrize("channels", [1, 3, 4])
def test_float_tiff_reload_is_bit_exact(tmp_path, channels):
    generator = torch.Generator().manual_seed(channels)
    image = torch.rand((channels, 16, 12), generator=generator)
    path = save_float_tiff(image, tmp_path / "out.tiff", {"transform": "h.pt"})
    reloaded, metadata = load_float_tiff(path)
    assert reloaded.dtype == torch.float32
    assert torch.equal(reloaded, image)
    assert metadata == {"channels": channels, "transform": "h.pt"}


def test_wire_codec_keeps_values_off_the_8_bit_lattice():
    image = torch.rand((3, 8, 8), generator=torch.Generator().manual_seed(5))
    decoded = decode_float_tiff(encode_float_tiff(image), 3)
    assert torch.equal(decoded, image)
    assert not torch.equal(decoded, torch.round(image * 255) / 255)


def test_wrong_channel_count_is_rejected():
    payload = encode_float_tiff(torch.rand((3, 5, 4)))
    with pytest.raises(ValueError):
        decode_float_tiff(payload, 2)


def test_non_image_tensor_is_a_domain_error():
    with pytest.raises(DomainError):
        encode_float_tiff(torch.rand((8, 8)))


def test_eight_bit_png_is_not_a_float_image(tmp_path):
    path = tmp_path / "plain.png"
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path)
    with pytest.raises(FileError):
        load_float_tiff(path)


def test_load_image_scales_to_unit_range(tmp_path):
    path = tmp_path / "photo.png"
    pixels = np.arange(48, dtype=np.uint8).reshape(4, 4, 3) * 5
    Image.fromarray(pixels).save(path)
    image = load_image(path)
    assert image.shape == (3, 4, 4)
    assert torch.equal(image, torch.from_numpy(pixels.transpose(2, 0, 1).copy()).float() / 255.0)


def test_missing_image_is_a_file_error(tmp_path):
    with pytest.raises(FileError) as excinfo:
        load_image(tmp_path / "absent.png")
    assert excinfo.value.paths == [str(tmp_path / "absent.png")]
