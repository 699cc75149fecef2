from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from src.utils.errors import DimensionMismatchError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GrayImage:
    """
    Grayscale image, intensities in [0, 1], stored row-major as (height, width).
    """
    pixels: np.ndarray

    def __post_init__(self):
        pixels = _frozen(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise ValueError(f"Expected a non-empty 2D array, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("Image intensities must be finite")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError("Image intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True, eq=False)
class FlowField:
    """
    Dense displacement field; u positive rightward, v positive downward (px).

    Components are float64 in memory. The .flo container stores float32.
    """
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u)
        v = _frozen(self.v)
        if u.ndim != 2 or u.size == 0:
            raise ValueError(f"Expected non-empty 2D components, got shape {u.shape}")
        if u.shape != v.shape:
            raise DimensionMismatchError(f"u {u.shape} and v {v.shape} differ")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("Flow components must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, width: int, height: int, u: float, v: float) -> "FlowField":
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def stack(self) -> np.ndarray:
        """(height, width, 2) array of (u, v)."""
        return np.stack([self.u, self.v], axis=-1)

    def __add__(self, other: "FlowField") -> "FlowField":
        check_same_shape(self, other)
        return FlowField(self.u + other.u, self.v + other.v)

    def __sub__(self, other: "FlowField") -> "FlowField":
        check_same_shape(self, other)
        return FlowField(self.u - other.u, self.v - other.v)

    def __mul__(self, factor: float) -> "FlowField":
        return FlowField(self.u * factor, self.v * factor)

    __rmul__ = __mul__

    def equals(self, other: "FlowField") -> bool:
        """Bitwise equality of both components."""
        return (
            self.shape == other.shape
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
        )


def check_same_shape(a, b) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"Dimension mismatch: {a.shape[1]}x{a.shape[0]} vs {b.shape[1]}x{b.shape[0]}"
        )


def to_gray(array: np.ndarray) -> GrayImage:
    """
    Convert an RGB(A) or single-channel raster to a GrayImage.

    8-bit input is scaled by 1/255; float input is assumed to be in [0, 1].
    """
    array = np.asarray(array)
    scale = 255.0 if array.dtype == np.uint8 else 1.0
    data = array.astype(np.float64) / scale

    if data.ndim == 3:
        if data.shape[2] < 3:
            data = data[..., 0]
        else:
            data = data[..., :3] @ np.asarray(LUMA_WEIGHTS)
    return GrayImage(np.clip(data, 0.0, 1.0))


def sample_bilinear(array: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup at (x, y); coordinates outside the grid clamp to the border."""
    coords = np.stack([np.ravel(y), np.ravel(x)])
    values = ndi.map_coordinates(array, coords, order=1, mode="nearest")
    return values.reshape(np.shape(x))


def warp_image(img: GrayImage, flow: FlowField) -> GrayImage:
    """
    Backward warp: output(x, y) = img sampled at (x + u, y + v).

    Raises:
        DimensionMismatchError: image and flow sizes differ
    """
    check_same_shape(img, flow)
    ys, xs = np.indices(img.shape, dtype=np.float64)
    warped = sample_bilinear(img.pixels, xs + flow.u, ys + flow.v)
    return GrayImage(np.clip(warped, 0.0, 1.0))


def warp_array(array: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Same backward warp on a raw float array (no range checks)."""
    ys, xs = np.indices(array.shape, dtype=np.float64)
    return sample_bilinear(array, xs + u, ys + v)


def vector_angle(u, v):
    """
    Angle in degrees in [0, 360) with screen-down v negated,
    so (1, 0) is 0°, (0, -1) is 90° and (0, 1) is 270°.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    angle = np.mod(np.degrees(np.arctan2(-v, u)), 360.0)
    # mod of a tiny negative number rounds up to 360.0
    angle = np.where(angle >= 360.0, 0.0, angle)
    return np.where(np.hypot(u, v) == 0.0, 0.0, angle)


def magnitude_angle(flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-pixel magnitude (px) and angle (degrees in [0, 360)).
    Zero vectors get angle 0.
    """
    magnitude = np.sqrt(flow.u ** 2 + flow.v ** 2)
    return magnitude, vector_angle(flow.u, flow.v)
