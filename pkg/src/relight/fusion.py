"""Exposure fusion: build shadow-free pseudo-targets from a scene's renders.

Differently lit renders of the same scene put their shadows in different
places, so a per-pixel quality-weighted multiscale blend of all of them
recovers an image with the shadows filled in. Weights follow the classic
contrast * saturation * well-exposedness product; blending happens in a
Laplacian pyramid against the Gaussian pyramid of the normalized weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import (
    DIRECTIONS,
    TEMPERATURES,
    UNIT,
    ImageTensor,
    LightSetting,
    load_png,
    require_range,
    save_png,
)

#: Floor added to every quality weight so normalization never divides by zero.
WEIGHT_EPS = 1e-12

#: Width of the well-exposedness Gaussian around intensity 0.5.
EXPOSEDNESS_SIGMA = 0.2

_LAPLACIAN_KERNEL = np.array(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]
)

_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class SceneBundle:
    """All renders of one scene, keyed by their light settings.

    Dimensions must agree and no light setting may repeat. A single image is
    accepted (fusion degenerates to the identity).
    """

    scene_id: str
    images: tuple

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if not self.images:
            raise ValueError(f"scene {self.scene_id!r}: bundle is empty")
        seen = set()
        shape = self.images[0][1].data.shape
        for light, img in self.images:
            if not isinstance(light, LightSetting):
                raise TypeError("bundle entries must be (LightSetting, ImageTensor)")
            require_range(img, UNIT)
            if light in seen:
                raise ValueError(f"duplicate light setting {light.name}")
            seen.add(light)
            if img.data.shape != shape:
                raise ValueError(
                    f"inconsistent dimensions: {img.data.shape} vs {shape}"
                )


@dataclass(frozen=True)
class WeightMap:
    """A non-negative per-pixel quality map, shape ``[H, W]``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected [H, W], got shape {arr.shape}")
        if not np.isfinite(arr).all() or float(arr.min()) < 0.0:
            raise ValueError("weights must be finite and non-negative")
        object.__setattr__(self, "data", arr)


def quality_weight(img: ImageTensor) -> WeightMap:
    """Per-pixel quality of a unit-range image.

    The weight is the product of three cues: local contrast (absolute
    Laplacian of the channel-mean grayscale, reflect padding), saturation
    (population standard deviation across RGB) and well-exposedness
    (per-channel Gaussian around 0.5, multiplied over channels), plus a tiny
    floor so every pixel keeps a nonzero weight.
    """
    require_range(img, UNIT)
    x = img.data.astype(np.float64)
    gray = x.mean(axis=0)
    contrast = np.abs(ndimage.convolve(gray, _LAPLACIAN_KERNEL, mode="reflect"))
    saturation = x.std(axis=0)
    exposedness = np.exp(
        -((x - 0.5) ** 2) / (2.0 * EXPOSEDNESS_SIGMA**2)
    ).prod(axis=0)
    return WeightMap(contrast * saturation * exposedness + WEIGHT_EPS)


def _blur(x: np.ndarray) -> np.ndarray:
    # Separable 5-tap binomial smoothing over the two trailing axes.
    out = ndimage.correlate1d(x, _BINOMIAL5, axis=-1, mode="reflect")
    return ndimage.correlate1d(out, _BINOMIAL5, axis=-2, mode="reflect")


def _downsample(x: np.ndarray) -> np.ndarray:
    return _blur(x)[..., ::2, ::2]


def _upsample_axis(x: np.ndarray, n: int, axis: int) -> np.ndarray:
    # Polyphase form of zero-stuffing plus a doubled binomial blur, with the
    # symmetric border applied to the coarse samples so constants stay
    # constant right up to the edges.
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 1)
    xp = np.pad(x, pad, mode="symmetric")
    body = np.take(xp, range(1, xp.shape[axis] - 1), axis=axis)
    left = np.take(xp, range(0, xp.shape[axis] - 2), axis=axis)
    right = np.take(xp, range(2, xp.shape[axis]), axis=axis)
    even = (left + 6.0 * body + right) / 8.0
    odd = (body + right) / 2.0
    out_shape = list(x.shape)
    out_shape[axis] = n
    out = np.empty(out_shape, dtype=np.float64)
    index = [slice(None)] * x.ndim
    index[axis] = slice(0, n, 2)
    out[tuple(index)] = np.take(even, range((n + 1) // 2), axis=axis)
    index[axis] = slice(1, n, 2)
    out[tuple(index)] = np.take(odd, range(n // 2), axis=axis)
    return out


def _upsample(x: np.ndarray, shape: tuple) -> np.ndarray:
    out = _upsample_axis(x, shape[-2], x.ndim - 2)
    return _upsample_axis(out, shape[-1], x.ndim - 1)


def _max_levels(shape: tuple) -> int:
    return max(1, int(math.floor(math.log2(min(shape[-2:])))))


def _check_levels(x: np.ndarray, levels: int) -> None:
    if levels < 1:
        raise ValueError("levels must be at least 1")
    if levels > _max_levels(x.shape):
        raise ValueError(
            f"levels {levels} exceeds log2 of the smallest spatial dimension "
            f"of shape {x.shape[-2:]}"
        )


def gaussian_pyramid(x: np.ndarray, levels: int) -> list:
    """Repeatedly blur and decimate; level 0 is the input itself."""
    x = np.asarray(x, dtype=np.float64)
    _check_levels(x, levels)
    pyramid = [x]
    for _ in range(levels - 1):
        pyramid.append(_downsample(pyramid[-1]))
    return pyramid


def laplacian_pyramid(x: np.ndarray, levels: int) -> list:
    """Band-pass stack: G_i minus the upsampled next level, residual on top."""
    gauss = gaussian_pyramid(x, levels)
    bands = [
        gauss[i] - _upsample(gauss[i + 1], gauss[i].shape[-2:])
        for i in range(levels - 1)
    ]
    bands.append(gauss[-1])
    return bands


def collapse_pyramid(bands: list) -> np.ndarray:
    """Invert :func:`laplacian_pyramid`."""
    acc = bands[-1]
    for band in reversed(bands[:-1]):
        acc = _upsample(acc, band.shape[-2:]) + band
    return acc


def default_levels(height: int, width: int) -> int:
    """Pyramid depth that keeps the coarsest level at least 4 px wide."""
    return max(1, int(math.floor(math.log2(min(height, width)))) - 2)


def exposure_fuse(bundle: SceneBundle, levels: int | None = None) -> ImageTensor:
    """Fuse all renders of a scene into one shadow-free image.

    Per-pixel quality weights are normalized to sum to one across the bundle;
    each image's Laplacian pyramid is blended with the Gaussian pyramid of its
    normalized weight map, the blend is collapsed and clipped to [0, 1].
    """
    images = [img.data.astype(np.float64) for _, img in bundle.images]
    height, width = images[0].shape[-2:]
    if levels is None:
        levels = default_levels(height, width)

    weights = np.stack([quality_weight(img).data for _, img in bundle.images])
    weights /= weights.sum(axis=0, keepdims=True)

    fused = None
    for img, weight in zip(images, weights):
        bands = laplacian_pyramid(img, levels)
        weight_pyr = gaussian_pyramid(weight, levels)
        blended = [band * wp[None] for band, wp in zip(bands, weight_pyr)]
        if fused is None:
            fused = blended
        else:
            fused = [acc + term for acc, term in zip(fused, blended)]

    out = np.clip(collapse_pyramid(fused), 0.0, 1.0)
    return ImageTensor(out.astype(np.float32), UNIT)


def scene_lights_present(scene_dir: Path) -> list[LightSetting]:
    """Light settings whose renders exist in a scene directory."""
    found = []
    for direction in DIRECTIONS:
        for kelvin in TEMPERATURES:
            light = LightSetting(direction, kelvin)
            if (scene_dir / light.filename()).exists():
                found.append(light)
    return found


def fuse_scene_dir(scene_dir, levels: int | None = None) -> Path:
    """Fuse every render found in ``scene_dir`` and write ``shadow_free.png``."""
    scene_dir = Path(scene_dir)
    lights = scene_lights_present(scene_dir)
    if not lights:
        raise FileNotFoundError(f"no light renders found under {scene_dir}")
    bundle = SceneBundle(
        scene_dir.name,
        tuple((light, load_png(scene_dir / light.filename())) for light in lights),
    )
    fused = exposure_fuse(bundle, levels)
    out_path = scene_dir / "shadow_free.png"
    save_png(fused, out_path)
    return out_path
