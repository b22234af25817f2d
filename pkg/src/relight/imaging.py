"""Shared image and feature-map conventions.

Everything downstream works on planar ``[3, H, W]`` RGB rasters carrying an
explicit range tag. PNG IO lives here so there is exactly one place where
bytes become floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

#: Compass points a light source can come from, clockwise from north.
DIRECTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")

#: Color temperatures (kelvin) a light source can have.
TEMPERATURES = (2500, 3500, 4500, 5500, 6500)

#: Range tags: unit is [0, 1] byte-scale data, model is the [-1, 1] range
#: used behind the tanh output heads.
UNIT = "unit"
MODEL = "model"

_RANGE_BOUNDS = {UNIT: (0.0, 1.0), MODEL: (-1.0, 1.0)}


class DimensionError(ValueError):
    """An image axis violates the size contract."""


class RangeTagError(ValueError):
    """An operation received an image with the wrong range tag."""


def check_spatial_dims(height: int, width: int) -> None:
    """Enforce the minimum size and the divisibility required by four halvings."""
    for axis, size in (("height", height), ("width", width)):
        if size < 8:
            raise DimensionError(f"{axis} {size} is below the minimum of 8")
        if size % 16 != 0:
            raise DimensionError(f"{axis} {size} is not divisible by 16")


@dataclass(frozen=True)
class ImageTensor:
    """An immutable ``[3, H, W]`` float32 raster tagged with its value range."""

    data: np.ndarray
    range_tag: str = UNIT

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected [3, H, W] layout, got shape {arr.shape}")
        check_spatial_dims(arr.shape[1], arr.shape[2])
        if self.range_tag not in _RANGE_BOUNDS:
            raise RangeTagError(f"unknown range tag {self.range_tag!r}")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        lo, hi = _RANGE_BOUNDS[self.range_tag]
        if float(arr.min()) < lo or float(arr.max()) > hi:
            raise ValueError(
                f"values outside the {self.range_tag} range [{lo}, {hi}]: "
                f"min={arr.min():.6g} max={arr.max():.6g}"
            )
        arr = arr.copy() if arr is self.data else arr
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeatureMap:
    """A ``[C, H, W]`` activation tensor with at least one channel.

    Accepts either a numpy array or a torch tensor; the wrapper only checks
    the shape contract and finiteness.
    """

    data: object

    def __post_init__(self):
        shape = tuple(self.data.shape)
        if len(shape) != 3 or shape[0] < 1:
            raise ValueError(f"expected [C, H, W] with C >= 1, got shape {shape}")
        if hasattr(self.data, "isfinite"):
            finite = bool(self.data.isfinite().all())
        else:
            finite = bool(np.isfinite(self.data).all())
        if not finite:
            raise ValueError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, order=True)
class LightSetting:
    """A light source: compass direction plus color temperature in kelvin."""

    direction: str
    temperature_kelvin: int

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction {self.direction!r} not one of {DIRECTIONS}")
        if self.temperature_kelvin not in TEMPERATURES:
            raise ValueError(
                f"temperature {self.temperature_kelvin} not one of {TEMPERATURES}"
            )

    @property
    def name(self) -> str:
        return f"{self.direction}_{self.temperature_kelvin}"

    def filename(self) -> str:
        return self.name + ".png"

    @classmethod
    def from_name(cls, name: str) -> "LightSetting":
        direction, _, kelvin = name.partition("_")
        if not kelvin:
            raise ValueError(f"cannot parse light setting from {name!r}")
        return cls(direction, int(kelvin))


#: The fixed output light of the any-to-one task: east, 4500 K.
TARGET_LIGHT = LightSetting("E", 4500)


def light_grid() -> tuple[LightSetting, ...]:
    """All 40 direction/temperature combinations, in a fixed order."""
    return tuple(
        LightSetting(d, t) for d in DIRECTIONS for t in TEMPERATURES
    )


def require_range(img: ImageTensor, tag: str) -> None:
    if img.range_tag != tag:
        raise RangeTagError(f"expected a {tag}-range image, got {img.range_tag}")


def _bytes_to_unit(arr: np.ndarray) -> np.ndarray:
    # Single conversion site: both load_png and quantize must produce
    # bit-identical floats for the same byte values.
    return arr.astype(np.float32) / 255.0


def load_png(path) -> ImageTensor:
    """Load an 8-bit RGB PNG as a unit-range image (value = byte / 255)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image file: {path}")
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(
                f"{path} is not 8-bit RGB content (mode {im.mode!r})"
            )
        arr = np.asarray(im, dtype=np.uint8)
    check_spatial_dims(arr.shape[0], arr.shape[1])
    return ImageTensor(_bytes_to_unit(arr.transpose(2, 0, 1)), UNIT)


def _quantize_bytes(img: ImageTensor) -> np.ndarray:
    # Round half away from zero; for non-negative unit data this is
    # floor(x * 255 + 0.5), which is deterministic across platforms.
    return np.floor(img.data.astype(np.float64) * 255.0 + 0.5)


def quantize(img: ImageTensor) -> ImageTensor:
    """Snap a unit-range image onto the 8-bit lattice."""
    require_range(img, UNIT)
    return ImageTensor(_bytes_to_unit(_quantize_bytes(img)), UNIT)


def save_png(img: ImageTensor, path) -> None:
    """Write a unit-range image as an 8-bit RGB PNG.

    Loading the file back yields exactly ``quantize(img)``.
    """
    require_range(img, UNIT)
    raster = _quantize_bytes(img).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(raster, mode="RGB").save(Path(path), format="PNG")


def to_model_range(img: ImageTensor) -> ImageTensor:
    """Affine map [0, 1] -> [-1, 1]."""
    require_range(img, UNIT)
    return ImageTensor(img.data * 2.0 - 1.0, MODEL)


def from_model_range(img: ImageTensor) -> ImageTensor:
    """Affine map [-1, 1] -> [0, 1], inverse of :func:`to_model_range`."""
    require_range(img, MODEL)
    return ImageTensor((img.data + 1.0) * 0.5, UNIT)
