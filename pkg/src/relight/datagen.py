"""Procedural multi-illumination scenes: flat boxes and disks on a floor,
lit from eight compass directions at five color temperatures.

The renderer is a deliberately simple top-down model: the light direction
only moves hard shadows, the color temperature only applies a global tint.
That is exactly the structure a relighting model has to learn, at a tiny
fraction of the cost of a real renderer. The directory layout matches the
loader contract: ``<root>/<scene_id>/<direction>_<kelvin>.png`` plus a
``shadow_free.png`` and a top-level ``manifest.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .fusion import SceneBundle, exposure_fuse
from .imaging import (
    DIRECTIONS,
    TEMPERATURES,
    UNIT,
    ImageTensor,
    LightSetting,
    TARGET_LIGHT,
    light_grid,
    load_png,
    quantize,
    save_png,
)

ALBEDO_MIN = 0.1
ALBEDO_MAX = 0.9

#: Shadows extend away from the light: unit (row, col) steps per direction,
#: with row 0 at the north edge and col 0 at the west edge.
_SHADOW_STEP = {
    "N": (1.0, 0.0),
    "NE": (math.sqrt(0.5), -math.sqrt(0.5)),
    "E": (0.0, -1.0),
    "SE": (-math.sqrt(0.5), -math.sqrt(0.5)),
    "S": (-1.0, 0.0),
    "SW": (-math.sqrt(0.5), math.sqrt(0.5)),
    "W": (0.0, 1.0),
    "NW": (math.sqrt(0.5), math.sqrt(0.5)),
}


@dataclass(frozen=True)
class SceneObject:
    """One primitive: an axis-aligned box or a disk, in canvas units.

    ``size`` is the half extent (box half-width/height or disk radius).
    """

    shape: str
    cx: float
    cy: float
    size: float
    albedo: tuple

    def __post_init__(self):
        if self.shape not in ("box", "disk"):
            raise ValueError(f"unknown shape {self.shape!r}")
        for lo, hi in ((self.cx - self.size, self.cx + self.size),
                       (self.cy - self.size, self.cy + self.size)):
            if lo < 0.0 or hi > 1.0:
                raise ValueError("object extends outside the canvas")
        _check_albedo(self.albedo)


def _check_albedo(albedo) -> None:
    if len(albedo) != 3 or any(
        not (ALBEDO_MIN <= float(a) <= ALBEDO_MAX) for a in albedo
    ):
        raise ValueError(
            f"albedo {albedo!r} outside [{ALBEDO_MIN}, {ALBEDO_MAX}]^3"
        )


@dataclass(frozen=True)
class SceneSpec:
    """A seedable scene description: 2 to 6 objects over a colored floor."""

    seed: int
    objects: tuple
    floor_albedo: tuple

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if not 2 <= len(self.objects) <= 6:
            raise ValueError(f"scene needs 2 to 6 objects, got {len(self.objects)}")
        _check_albedo(self.floor_albedo)

    @property
    def n_objects(self) -> int:
        return len(self.objects)


@dataclass(frozen=True)
class RenderConfig:
    """Knobs of the synthetic renderer."""

    resolution: int = 64
    shadow_length: float = 0.3
    ambient: float = 0.25
    temperatures: tuple = TEMPERATURES
    directions: tuple = DIRECTIONS

    def __post_init__(self):
        if self.resolution % 16 != 0 or self.resolution < 16:
            raise ValueError(
                f"resolution {self.resolution} is not divisible by 16"
            )
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("ambient must lie in [0, 1]")
        if self.shadow_length < 0.0:
            raise ValueError("shadow_length must be non-negative")


def sample_scene(seed: int) -> SceneSpec:
    """Draw a random scene; a fixed seed always yields the same spec."""
    rng = np.random.default_rng(seed)
    n_objects = int(rng.integers(2, 7))
    objects = []
    for _ in range(n_objects):
        shape = "box" if rng.random() < 0.5 else "disk"
        size = float(rng.uniform(0.05, 0.16))
        cx = float(rng.uniform(size, 1.0 - size))
        cy = float(rng.uniform(size, 1.0 - size))
        albedo = tuple(float(a) for a in rng.uniform(ALBEDO_MIN, ALBEDO_MAX, 3))
        objects.append(SceneObject(shape, cx, cy, size, albedo))
    floor = tuple(float(a) for a in rng.uniform(ALBEDO_MIN, ALBEDO_MAX, 3))
    return SceneSpec(seed=seed, objects=tuple(objects), floor_albedo=floor)


def kelvin_to_rgb(temperature_kelvin: float) -> tuple:
    """Blackbody tint of a light source, normalized so the peak channel is 1.

    Piecewise logarithmic approximation of the Planckian locus fitted on
    byte-scale channels; channels are floored at one byte step so the tint
    never zeroes a channel entirely.
    """
    t = float(temperature_kelvin)
    if not 1000.0 <= t <= 12000.0:
        raise ValueError(f"temperature {t} outside the supported [1000, 12000] K")
    t100 = t / 100.0
    if t100 <= 66.0:
        red = 255.0
        green = 99.4708025861 * math.log(t100) - 161.1195681661
        if t100 <= 19.0:
            blue = 0.0
        else:
            blue = 138.5177312231 * math.log(t100 - 10.0) - 305.0447927307
    else:
        red = 329.698727446 * (t100 - 60.0) ** -0.1332047592
        green = 288.1221695283 * (t100 - 60.0) ** -0.0755148492
        blue = 255.0
    channels = np.clip([red, green, blue], 1.0, 255.0)
    channels /= channels.max()
    return tuple(float(c) for c in channels)


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def _object_mask(obj: SceneObject, resolution: int) -> np.ndarray:
    coords = (np.arange(resolution) + 0.5) / resolution
    yy = coords[:, None]  # rows advance southwards
    xx = coords[None, :]
    if obj.shape == "box":
        return (np.abs(xx - obj.cx) <= obj.size) & (np.abs(yy - obj.cy) <= obj.size)
    return (xx - obj.cx) ** 2 + (yy - obj.cy) ** 2 <= obj.size**2


def _shift_mask(mask: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(mask)
    rows, cols = mask.shape
    src_r = slice(max(0, -dr), rows - max(0, dr))
    src_c = slice(max(0, -dc), cols - max(0, dc))
    dst_r = slice(max(0, dr), rows - max(0, -dr))
    dst_c = slice(max(0, dc), cols - max(0, -dc))
    out[dst_r, dst_c] = mask[src_r, src_c]
    return out


def shadow_mask(
    spec: SceneSpec, direction: str, cfg: RenderConfig
) -> np.ndarray:
    """Boolean floor-shadow mask: objects swept away from the light."""
    res = cfg.resolution
    objects = np.zeros((res, res), dtype=bool)
    for obj in spec.objects:
        objects |= _object_mask(obj, res)
    step_r, step_c = _SHADOW_STEP[direction]
    length_px = cfg.shadow_length * res
    shadow = np.zeros((res, res), dtype=bool)
    for t in range(1, _round_half_away(length_px) + 1):
        dr = _round_half_away(t * step_r)
        dc = _round_half_away(t * step_c)
        shadow |= _shift_mask(objects, dr, dc)
    return shadow & ~objects


def render(spec: SceneSpec, light: LightSetting, cfg: RenderConfig) -> ImageTensor:
    """Render one scene under one light setting, deterministically.

    Lit pixels receive ``albedo * tint``; floor pixels inside a shadow
    receive ``albedo * tint * ambient``. Objects are never shadowed.
    """
    res = cfg.resolution
    albedo = np.empty((3, res, res), dtype=np.float64)
    albedo[:] = np.asarray(spec.floor_albedo)[:, None, None]
    for obj in spec.objects:
        mask = _object_mask(obj, res)
        for c in range(3):
            albedo[c][mask] = obj.albedo[c]

    shade = np.where(shadow_mask(spec, light.direction, cfg), cfg.ambient, 1.0)
    tint = np.asarray(kelvin_to_rgb(light.temperature_kelvin))
    img = albedo * tint[:, None, None] * shade[None]
    return ImageTensor(img.astype(np.float32), UNIT)


def _scene_id(index: int) -> str:
    return f"scene{index:04d}"


def split_scenes(scene_ids: list, ratio: float, seed: int) -> dict:
    """Deterministic train/val partition at the given train ratio."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("split ratio must lie in (0, 1]")
    order = list(np.random.default_rng(seed).permutation(sorted(scene_ids)))
    n = len(order)
    n_train = n if n < 2 else min(n - 1, max(1, round(ratio * n)))
    return {
        "train": sorted(str(s) for s in order[:n_train]),
        "val": sorted(str(s) for s in order[n_train:]),
    }


def generate_dataset(
    n_scenes: int,
    cfg: RenderConfig,
    root,
    seed: int = 0,
    split_ratio: float = 0.9,
    target: LightSetting = TARGET_LIGHT,
    fusion_levels: int | None = None,
) -> dict:
    """Render ``n_scenes`` scenes under the full light grid and write them out.

    Each scene directory receives 40 renders plus the exposure-fused
    ``shadow_free.png``; the manifest records scene ids, the train/val split
    and the target light. Re-running with the same arguments reproduces every
    byte.
    """
    if n_scenes < 1:
        raise ValueError("need at least one scene")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    scene_ids = []
    for index in range(n_scenes):
        scene_id = _scene_id(index)
        scene_ids.append(scene_id)
        scene_dir = root / scene_id
        scene_dir.mkdir(parents=True, exist_ok=True)
        spec = sample_scene(seed + index)
        renders = []
        for light in light_grid():
            img = render(spec, light, cfg)
            save_png(img, scene_dir / light.filename())
            # quantize() matches what a reload of the saved PNG would give,
            # so the fused target is identical either way.
            renders.append((light, quantize(img)))
        fused = exposure_fuse(SceneBundle(scene_id, tuple(renders)), fusion_levels)
        save_png(fused, scene_dir / "shadow_free.png")

    manifest = {
        "scenes": scene_ids,
        "split": split_scenes(scene_ids, split_ratio, seed),
        "target": {"direction": target.direction, "kelvin": target.temperature_kelvin},
        "resolution": cfg.resolution,
        "seed": seed,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = json.loads(path.read_text())
    for key in ("scenes", "split", "target"):
        if key not in manifest:
            raise ValueError(f"manifest is missing field {key!r}")
    return manifest


def manifest_target(manifest: dict) -> LightSetting:
    return LightSetting(
        manifest["target"]["direction"], int(manifest["target"]["kelvin"])
    )


def iter_labeled_pairs(
    root,
    target: LightSetting | None = None,
    scenes: list | None = None,
) -> Iterator[tuple]:
    """Yield ``(scene_id, light, X, Y, Y_sf)`` for every render of each scene.

    ``Y`` is always the scene's render under the target light and ``Y_sf``
    its shadow-free fusion; both are shared objects across one scene's pairs.
    """
    root = Path(root)
    manifest = read_manifest(root)
    if target is None:
        target = manifest_target(manifest)
    if scenes is None:
        scenes = manifest["scenes"]
    for scene_id in scenes:
        scene_dir = root / scene_id
        target_img = load_png(scene_dir / target.filename())
        shadow_free = load_png(scene_dir / "shadow_free.png")
        for light in light_grid():
            yield (
                scene_id,
                light,
                load_png(scene_dir / light.filename()),
                target_img,
                shadow_free,
            )


def load_pairs(
    root,
    target: LightSetting | None = None,
    scenes: list | None = None,
) -> Iterator[tuple]:
    """Any-to-one training stream: ``(X, Y, Y_sf)`` per render, 40 per scene."""
    for _, _, x, y, y_sf in iter_labeled_pairs(root, target, scenes):
        yield x, y, y_sf


@dataclass
class TrainingSet:
    """Compact in-memory uint8 store of the training triples.

    ``x`` holds one entry per (scene, light) pair; targets are stored once
    per scene and indexed through ``scene_index``.
    """

    x: np.ndarray
    y: np.ndarray
    y_sf: np.ndarray
    scene_index: np.ndarray
    scene_ids: list
    lights: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.x.shape[0]

    def triples(self, indices) -> tuple:
        idx = np.asarray(indices)
        scene = self.scene_index[idx]
        return self.x[idx], self.y[scene], self.y_sf[scene]


def load_training_set(
    root,
    target: LightSetting | None = None,
    scenes: list | None = None,
) -> TrainingSet:
    """Materialize the any-to-one pairs of the given scenes as uint8 arrays."""
    xs, scene_idx, lights = [], [], []
    ys, ysfs, scene_ids = [], [], []
    for scene_id, light, x, y, y_sf in iter_labeled_pairs(root, target, scenes):
        if not scene_ids or scene_ids[-1] != scene_id:
            scene_ids.append(scene_id)
            ys.append(np.floor(y.data * 255.0 + 0.5).astype(np.uint8))
            ysfs.append(np.floor(y_sf.data * 255.0 + 0.5).astype(np.uint8))
        xs.append(np.floor(x.data * 255.0 + 0.5).astype(np.uint8))
        scene_idx.append(len(scene_ids) - 1)
        lights.append(light)
    if not xs:
        raise ValueError(f"no training pairs found under {root}")
    return TrainingSet(
        x=np.stack(xs),
        y=np.stack(ys),
        y_sf=np.stack(ysfs),
        scene_index=np.asarray(scene_idx),
        scene_ids=scene_ids,
        lights=lights,
    )
