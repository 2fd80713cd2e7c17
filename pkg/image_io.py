"""
Lossless raster I/O for [C, H, W] images in [0, 1].

Protected images, grids and wire payloads are TIFFs with 32-bit float samples (mode F,
channels stacked vertically into a C*H x W plane), so float pixels survive a reload bit for bit.
Side information (channel count, grid layout) rides in the TIFF ImageDescription tag as YAML.
8-bit inputs (PNG, JPEG, ...) are read through Pillow and divided by 255.
"""

import io
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import yaml
from PIL import Image, UnidentifiedImageError

from errors import DomainError, FileError

PathLike = Union[str, Path]

PNG = "image/png"
TIFF = "image/tiff"
_MODES = {1: "L", 3: "RGB", 4: "RGBA"}
_DESCRIPTION_TAG = 270


def from_uint8(array: np.ndarray) -> torch.Tensor:
    """H x W (x C) uint8 array -> float32 [C, H, W] in [0, 1]"""
    if array.ndim == 2:
        array = array[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1))).to(torch.float32) / 255.0


def load_image(path: PathLike, channels: int = 3) -> torch.Tensor:
    """Read any Pillow-readable image as float32 [channels, H, W] in [0, 1]"""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            converted = img.convert(_MODES.get(channels, "RGB"))
    except FileNotFoundError as e:
        raise FileError("image not found", [path]) from e
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise FileError(f"unreadable image: {e}", [path]) from e
    return from_uint8(np.asarray(converted))


def encode_float_tiff(image: torch.Tensor, description: Optional[str] = None) -> bytes:
    """[C, H, W] float image -> TIFF bytes with float32 samples, channels stacked vertically"""
    if image.dim() != 3:
        raise DomainError(f"expected a [C, H, W] image, got {tuple(image.shape)}")
    channels, height, width = image.shape
    plane = image.detach().cpu().to(torch.float32).numpy().reshape(channels * height, width)
    buffer = io.BytesIO()
    extra = {"description": description} if description is not None else {}
    Image.fromarray(np.ascontiguousarray(plane)).save(buffer, format="TIFF", **extra)
    return buffer.getvalue()


def decode_float_tiff(payload: bytes, channels: int) -> torch.Tensor:
    """Inverse of encode_float_tiff; raises ValueError/OSError on malformed input"""
    with Image.open(io.BytesIO(payload)) as img:
        img.load()
        if img.mode != "F":
            raise ValueError(f"expected a 32-bit float TIFF, got mode {img.mode}")
        plane = np.array(img, dtype=np.float32)
    rows, width = plane.shape
    if rows % channels:
        raise ValueError(f"{rows} rows do not stack {channels} channels")
    return torch.from_numpy(plane.reshape(channels, rows // channels, width))


def save_float_tiff(image: torch.Tensor, path: PathLike, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write one float image; the channel count and any metadata go into the description tag"""
    path = Path(path)
    description = yaml.safe_dump({"channels": int(image.shape[0]), **(metadata or {})}, sort_keys=False)
    payload = encode_float_tiff(image, description)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise FileError(f"cannot write image: {e}", [path]) from e
    return path


def load_float_tiff(path: PathLike) -> Tuple[torch.Tensor, Dict[str, Any]]:
    """Read a file written by save_float_tiff: (float32 [C, H, W] image, metadata)"""
    path = Path(path)
    try:
        payload = path.read_bytes()
        with Image.open(io.BytesIO(payload)) as img:
            metadata = yaml.safe_load(img.tag_v2.get(_DESCRIPTION_TAG, "")) or {}
        if not isinstance(metadata, dict) or "channels" not in metadata:
            raise ValueError("missing channel count")
        image = decode_float_tiff(payload, int(metadata["channels"]))
    except FileNotFoundError as e:
        raise FileError("image not found", [path]) from e
    except (OSError, UnidentifiedImageError, AttributeError, ValueError, yaml.YAMLError) as e:
        raise FileError(f"not a float image written by this tool: {e}", [path]) from e
    return image, metadata


def decode_png(payload: bytes, channels: int) -> torch.Tensor:
    with Image.open(io.BytesIO(payload)) as img:
        img.load()
        if img.format != "PNG":
            raise ValueError(f"expected PNG, got {img.format}")
        expected = _MODES.get(channels)
        if img.mode != expected:
            raise ValueError(f"expected a {expected} PNG for {channels} channels, got mode {img.mode}")
        array = np.asarray(img)
    return from_uint8(array)
