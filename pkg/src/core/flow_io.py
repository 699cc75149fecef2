"""
File formats: Middlebury .flo flows and 8-bit PNG rasters.

.flo layout (little-endian): float32 magic 202021.25, int32 width, int32 height,
then width*height interleaved (u, v) float32 pairs, row-major.
"""
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from src.core.flow_field import FlowField, GrayImage, to_gray
from src.utils.errors import FloFormatError

FLO_MAGIC = 202021.25
_HEADER = struct.Struct("<fii")


def write_flo(flow: FlowField) -> bytes:
    """
    Serialize a flow to .flo bytes.

    Raises:
        FloFormatError: a component does not fit in float32
    """
    data = np.empty((flow.height, flow.width, 2), dtype="<f4")
    with np.errstate(over="ignore"):
        data[..., 0] = flow.u
        data[..., 1] = flow.v
    if not np.all(np.isfinite(data)):
        raise FloFormatError("Flow components overflow float32")
    return _HEADER.pack(FLO_MAGIC, flow.width, flow.height) + data.tobytes()


def read_flo(buffer: bytes) -> FlowField:
    """
    Parse .flo bytes.

    Raises:
        FloFormatError: bad magic, non-positive dimensions or truncated payload
    """
    if len(buffer) < _HEADER.size:
        raise FloFormatError(f"Truncated header: {len(buffer)} bytes")

    magic, width, height = _HEADER.unpack_from(buffer, 0)
    if magic != FLO_MAGIC:
        raise FloFormatError(f"Bad magic number {magic!r}, expected {FLO_MAGIC}")
    if width <= 0 or height <= 0:
        raise FloFormatError(f"Non-positive dimensions {width}x{height}")

    expected = _HEADER.size + 8 * width * height
    if len(buffer) < expected:
        raise FloFormatError(f"Truncated payload: {len(buffer)} bytes, expected {expected}")

    data = np.frombuffer(buffer, dtype="<f4", count=2 * width * height, offset=_HEADER.size)
    data = data.reshape(height, width, 2)
    if not np.all(np.isfinite(data)):
        raise FloFormatError("Flow payload contains non-finite values")
    return FlowField(data[..., 0].astype(np.float64), data[..., 1].astype(np.float64))


def save_flo(path: str | Path, flow: FlowField) -> None:
    Path(path).write_bytes(write_flo(flow))


def load_flo(path: str | Path) -> FlowField:
    return read_flo(Path(path).read_bytes())


def read_image(path: str | Path) -> GrayImage:
    """Load any pillow-readable raster as grayscale (RGB via fixed luma weights)."""
    with Image.open(path) as img:
        if img.mode in ("RGB", "RGBA"):
            array = np.asarray(img.convert("RGB"))
        else:
            array = np.asarray(img.convert("L"))
    return to_gray(array)


def to_uint8(img: GrayImage) -> np.ndarray:
    return np.round(img.pixels * 255.0).astype(np.uint8)


def write_image(path: str | Path, img: GrayImage) -> None:
    """Write an 8-bit grayscale PNG."""
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def write_rgb(path: str | Path, rgb: np.ndarray) -> None:
    """Write a uint8 (height, width, 3) array as a 24-bit PNG."""
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PNG")
