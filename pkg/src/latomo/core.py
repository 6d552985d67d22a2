"""Domain types, Hounsfield unit conversions, image metrics, and raw/PGM I/O.

Coordinate convention (fixed, used by every module):
  * X increases rightward and is the second (column) array axis.
  * Y increases upward and is the first (row) array axis, i.e. row 0 is the
    bottom of the image.  PGM previews are written top row first so they
    display upright.
  * The grid is centered on the isocenter unless ``origin`` shifts it.

Images are stored as linear attenuation in mm^-1; Hounsfield units are a
display/metric convention converted at the boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# 0 HU is anchored at 0.02/mm, so one Hounsfield unit is 2e-5/mm.
MU_WATER = 0.02
MU_PER_HU = MU_WATER / 1000.0

_RAW_HEADER = struct.Struct("<IIf4x")  # width, height, pixel size, reserved


def hu_to_mu(hu):
    """Hounsfield units -> linear attenuation (mm^-1). Accepts scalars or arrays."""
    return MU_WATER * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0)


def mu_to_hu(mu):
    """Linear attenuation (mm^-1) -> Hounsfield units. Exact inverse of hu_to_mu."""
    return np.asarray(mu, dtype=np.float64) / MU_PER_HU - 1000.0


@dataclass(frozen=True)
class ImageGrid:
    """2-D attenuation image on a regular, isotropic pixel lattice.

    ``data`` has shape (height, width), row 0 at the bottom (smallest Y).
    ``origin`` is the mm offset of the grid center from the isocenter.
    """

    width: int
    height: int
    pixel_size: float
    data: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be > 0")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.shape != (self.height, self.width):
            if arr.size != self.width * self.height:
                raise ValueError(
                    f"data size {arr.size} != width*height {self.width * self.height}"
                )
            arr = arr.reshape(self.height, self.width)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, width, height, pixel_size, origin=(0.0, 0.0)):
        return cls(width, height, pixel_size, np.zeros((height, width)), origin)

    def with_data(self, data: np.ndarray) -> "ImageGrid":
        return ImageGrid(self.width, self.height, self.pixel_size, data, self.origin)

    def x_centers(self) -> np.ndarray:
        """World X of pixel centers per column (mm)."""
        return (np.arange(self.width) - (self.width - 1) / 2.0) * self.pixel_size + self.origin[0]

    def y_centers(self) -> np.ndarray:
        """World Y of pixel centers per row (mm), increasing with row index."""
        return (np.arange(self.height) - (self.height - 1) / 2.0) * self.pixel_size + self.origin[1]

    def to_hu(self) -> np.ndarray:
        return mu_to_hu(self.data)


@dataclass(frozen=True)
class Sinogram:
    """Line integrals indexed by (view, channel); ``data`` shape (num_views, num_channels)."""

    num_views: int
    num_channels: int
    view_angles: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.view_angles, dtype=np.float64)
        if angles.shape != (self.num_views,):
            raise ValueError("view_angles length must equal num_views")
        if self.num_views > 1 and not np.all(np.diff(angles) > 0):
            raise ValueError("view_angles must be strictly increasing")
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.size != self.num_views * self.num_channels:
            raise ValueError("sinogram data size mismatch")
        object.__setattr__(self, "view_angles", angles)
        object.__setattr__(self, "data", arr.reshape(self.num_views, self.num_channels))


@dataclass(frozen=True)
class FanBeamGeometry:
    """Fan-beam scan trajectory with a flat, equally spaced detector.

    The source travels on the circle of radius ``source_to_isocenter`` (mm);
    its angular position is measured in degrees from the +X axis.  The
    detector is centered on the ray through the isocenter, perpendicular to
    it, at distance ``source_to_detector`` from the source.
    """

    source_to_detector: float
    source_to_isocenter: float
    detector_channels: int
    channel_size: float
    angle_start: float
    angle_end: float
    angle_increment: float

    def __post_init__(self):
        if not (0 < self.source_to_isocenter < self.source_to_detector):
            raise ValueError("require 0 < source_to_isocenter < source_to_detector")
        if self.detector_channels < 1 or self.channel_size <= 0:
            raise ValueError("invalid detector description")
        if self.angle_increment <= 0 or self.angle_end < self.angle_start:
            raise ValueError("invalid angular range")

    @property
    def num_views(self) -> int:
        span = self.angle_end - self.angle_start
        return int(np.floor(span / self.angle_increment + 1e-9)) + 1

    def view_angles_deg(self) -> np.ndarray:
        return self.angle_start + self.angle_increment * np.arange(self.num_views)

    @property
    def half_fan_angle_deg(self) -> float:
        half_width = self.detector_channels * self.channel_size / 2.0
        return float(np.degrees(np.arctan2(half_width, self.source_to_detector)))

    @property
    def fov_radius(self) -> float:
        """Radius (mm) of the circle seen by every ray fan."""
        return self.source_to_isocenter * float(
            np.sin(np.radians(self.half_fan_angle_deg))
        )


@dataclass(frozen=True)
class RoiRect:
    """Inclusive pixel-index rectangle: columns x0..x1, rows y0..y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError("invalid ROI rectangle")

    def validate_for(self, width: int, height: int):
        if self.x1 >= width or self.y1 >= height:
            raise ValueError(f"ROI {self} exceeds grid {width}x{height}")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1 + 1), slice(self.x0, self.x1 + 1)


def roi_rmse(img: ImageGrid, reference: ImageGrid, roi: RoiRect | None = None) -> float:
    """Root-mean-square error in HU over ``roi`` (whole grid when omitted)."""
    if (img.width, img.height) != (reference.width, reference.height):
        raise ValueError("image dimensions differ")
    if roi is None:
        roi = RoiRect(0, 0, img.width - 1, img.height - 1)
    roi.validate_for(img.width, img.height)
    ys, xs = roi.slices()
    diff_hu = (img.data[ys, xs] - reference.data[ys, xs]) / MU_PER_HU
    return float(np.sqrt(np.mean(diff_hu * diff_hu)))


def rmse_hu(a: np.ndarray, b: np.ndarray) -> float:
    """RMSE in HU between two attenuation arrays of equal shape."""
    d = (np.asarray(a) - np.asarray(b)) / MU_PER_HU
    return float(np.sqrt(np.mean(d * d)))


# ---------------------------------------------------------------------------
# Raw float dump: 16-byte header (uint32 width, uint32 height, float32 pixel
# size, 4 reserved bytes), then float32 row-major samples, all little-endian.
# ---------------------------------------------------------------------------

def write_raw(path, array2d: np.ndarray, pixel_size: float):
    arr = np.ascontiguousarray(np.asarray(array2d, dtype="<f4"))
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(width, height, float(pixel_size)))
        fh.write(arr.tobytes())


def read_raw(path) -> tuple[np.ndarray, float]:
    """Returns (float32 array of shape (height, width), pixel size)."""
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    width, height, pixel_size = _RAW_HEADER.unpack_from(blob)
    expected = _RAW_HEADER.size + 4 * width * height
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_RAW_HEADER.size)
    return data.reshape(height, width).copy(), float(pixel_size)


def write_raw_image(path, img: ImageGrid):
    write_raw(path, img.data, img.pixel_size)


def read_raw_image(path, origin=(0.0, 0.0)) -> ImageGrid:
    data, pixel_size = read_raw(path)
    height, width = data.shape
    return ImageGrid(width, height, pixel_size, data.astype(np.float64), origin)


def write_raw_sinogram(path, sino: Sinogram, channel_size: float = 0.0):
    # width = channels, height = views; the header's size slot carries the
    # channel pitch (0 when unknown). View angles live in the run config.
    write_raw(path, sino.data, channel_size)


def write_pgm16_values(path, values: np.ndarray, window: tuple[float, float]):
    """16-bit PGM of a (height, width) array: clamp to ``window``, map
    affinely to 0..65535.  Rows are emitted top-first (largest Y first) so
    viewers show the image upright."""
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError("window must satisfy high > low")
    values = np.asarray(values, dtype=np.float64)
    height, width = values.shape
    scaled = (np.clip(values, lo, hi) - lo) / (hi - lo) * 65535.0
    samples = np.round(scaled).astype(">u2")[::-1, :]  # big-endian per PGM spec
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(np.ascontiguousarray(samples).tobytes())


def write_pgm16(path, img: ImageGrid, window_hu: tuple[float, float]):
    """16-bit PGM preview of an image with a caller-specified HU window."""
    write_pgm16_values(path, img.to_hu(), window_hu)
