import hashlib
from pathlib import Path

import numpy as np
import pytest

from oracles import blackbody_rgb_loops
from relight.datagen import (
    RenderConfig,
    SceneObject,
    SceneSpec,
    generate_dataset,
    iter_labeled_pairs,
    kelvin_to_rgb,
    load_pairs,
    load_training_set,
    read_manifest,
    render,
    sample_scene,
    shadow_mask,
    split_scenes,
)
from relight.imaging import (
    LightSetting,
    TARGET_LIGHT,
    TEMPERATURES,
    load_png,
)

CFG = RenderConfig(resolution=64)


def _convex_spec(obj):
    # the 2-object minimum with a duplicated primitive keeps the union convex
    return SceneSpec(seed=0, objects=(obj, obj), floor_albedo=(0.4, 0.4, 0.4))


class TestKelvinToRgb:
    def test_white_point(self):
        r, g, b = kelvin_to_rgb(6600)
        assert r == 1.0
        assert abs(g - 1.0) < 0.01
        assert abs(b - 1.0) < 0.01

    def test_warm_low_temperature(self):
        r, g, b = kelvin_to_rgb(2500)
        assert r == 1.0 and r > g > b
        assert kelvin_to_rgb(2500) == blackbody_rgb_loops(2500)

    def test_matches_published_approximation(self):
        for kelvin in (1500, 2500, 3500, 4500, 5500, 6500, 8000, 11000):
            assert np.allclose(kelvin_to_rgb(kelvin), blackbody_rgb_loops(kelvin))

    def test_blue_monotone_up_to_white_point(self):
        blues = [kelvin_to_rgb(t)[2] for t in range(2500, 6700, 100)]
        assert all(b2 >= b1 for b1, b2 in zip(blues, blues[1:]))

    def test_normalization_invariant(self):
        for kelvin in range(1000, 12001, 500):
            rgb = kelvin_to_rgb(kelvin)
            assert max(rgb) == 1.0
            assert all(0.0 < c <= 1.0 for c in rgb)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            kelvin_to_rgb(900)
        with pytest.raises(ValueError):
            kelvin_to_rgb(12500)


class TestSceneSpecs:
    def test_albedo_bounds(self):
        with pytest.raises(ValueError, match="albedo"):
            SceneObject("box", 0.5, 0.5, 0.1, (0.95, 0.5, 0.5))

    def test_object_must_fit_canvas(self):
        with pytest.raises(ValueError, match="canvas"):
            SceneObject("disk", 0.05, 0.5, 0.2, (0.5, 0.5, 0.5))

    def test_object_count_bounds(self):
        obj = SceneObject("box", 0.5, 0.5, 0.1, (0.5, 0.5, 0.5))
        with pytest.raises(ValueError, match="objects"):
            SceneSpec(seed=0, objects=(obj,), floor_albedo=(0.5, 0.5, 0.5))
        with pytest.raises(ValueError, match="objects"):
            SceneSpec(seed=0, objects=(obj,) * 7, floor_albedo=(0.5, 0.5, 0.5))

    def test_resolution_divisibility(self):
        with pytest.raises(ValueError, match="divisible"):
            RenderConfig(resolution=60)

    def test_sampled_scenes_valid_and_deterministic(self):
        for seed in range(5):
            spec = sample_scene(seed)
            assert 2 <= spec.n_objects <= 6
        assert sample_scene(3) == sample_scene(3)


class TestRender:
    def test_deterministic(self):
        spec = sample_scene(1)
        light = LightSetting("NE", 3500)
        assert np.array_equal(render(spec, light, CFG).data,
                              render(spec, light, CFG).data)

    def test_direction_enters_only_through_shadows(self):
        spec = sample_scene(2)
        cfg0 = RenderConfig(resolution=64, shadow_length=0.0)
        east = render(spec, LightSetting("E", 4500), cfg0).data
        west = render(spec, LightSetting("W", 4500), cfg0).data
        assert np.array_equal(east, west)
        # with shadows enabled the opposite directions differ
        east_s = render(spec, LightSetting("E", 4500), CFG).data
        west_s = render(spec, LightSetting("W", 4500), CFG).data
        assert not np.array_equal(east_s, west_s)

    def test_box_shadow_falls_west_of_east_light(self):
        box = SceneObject("box", 0.5, 0.5, 0.125, (0.5, 0.5, 0.5))
        mask = shadow_mask(_convex_spec(box), "E", CFG)
        rows, cols = np.nonzero(mask)
        centers = (np.arange(64) + 0.5) / 64.0
        box_cols = np.nonzero(np.abs(centers - 0.5) <= 0.125)[0]
        assert rows.size > 0
        assert cols.max() < box_cols.min()
        assert rows.min() >= box_cols.min() and rows.max() <= box_cols.max()

    def test_opposite_shadows_disjoint_for_convex_objects(self):
        box = SceneObject("box", 0.5, 0.5, 0.125, (0.5, 0.5, 0.5))
        disk = SceneObject("disk", 0.5, 0.5, 0.12, (0.5, 0.5, 0.5))
        for obj in (box, disk):
            spec = _convex_spec(obj)
            for d1, d2 in (("N", "S"), ("E", "W"), ("NE", "SW"), ("SE", "NW")):
                m1 = shadow_mask(spec, d1, CFG)
                m2 = shadow_mask(spec, d2, CFG)
                assert m1.sum() > 0 and m2.sum() > 0
                assert not np.any(m1 & m2)

    def test_hue_shifts_with_temperature(self):
        spec = sample_scene(7)
        ratios = []
        for kelvin in TEMPERATURES:
            img = render(spec, LightSetting("E", kelvin), CFG).data.astype(np.float64)
            ratios.append(img[2].mean() / img[0].mean())
        # rank correlation of the blue/red ratio with temperature is exactly 1
        assert all(r2 > r1 for r1, r2 in zip(ratios, ratios[1:]))

    def test_unit_range_output(self):
        img = render(sample_scene(4), LightSetting("SW", 2500), CFG)
        assert img.range_tag == "unit"
        assert float(img.data.min()) >= 0.0 and float(img.data.max()) <= 1.0


def _dir_digest(root):
    digest = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class TestGenerateDataset:
    def test_counts_and_manifest(self, tmp_path):
        manifest = generate_dataset(2, RenderConfig(resolution=32), tmp_path / "d", seed=7)
        assert manifest["scenes"] == ["scene0000", "scene0001"]
        pngs = sorted((tmp_path / "d").rglob("*.png"))
        assert len(pngs) == 2 * 41
        for scene in manifest["scenes"]:
            assert (tmp_path / "d" / scene / "shadow_free.png").exists()
        on_disk = read_manifest(tmp_path / "d")
        assert on_disk["target"] == {"direction": "E", "kelvin": 4500}

    def test_split_ratio(self):
        split = split_scenes([f"s{i}" for i in range(10)], 0.9, 0)
        assert len(split["train"]) == 9 and len(split["val"]) == 1

    def test_regeneration_is_byte_identical(self, tmp_path):
        cfg = RenderConfig(resolution=32)
        generate_dataset(2, cfg, tmp_path / "a", seed=3)
        generate_dataset(2, cfg, tmp_path / "b", seed=3)
        assert _dir_digest(tmp_path / "a") == _dir_digest(tmp_path / "b")

    def test_needs_at_least_one_scene(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(0, CFG, tmp_path / "x")


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("pairs")
    generate_dataset(1, RenderConfig(resolution=32), root, seed=0)
    return root


class TestLoadPairs:

    def test_forty_pairs_per_scene(self, dataset):
        pairs = list(load_pairs(dataset))
        assert len(pairs) == 40

    def test_identity_pair_matches_bitwise(self, dataset):
        for _, light, x, y, _ in iter_labeled_pairs(dataset):
            if light == TARGET_LIGHT:
                assert np.array_equal(x.data, y.data)
                break
        else:
            pytest.fail("identity pair missing")

    def test_every_target_is_the_target_render(self, dataset):
        reference = load_png(dataset / "scene0000" / TARGET_LIGHT.filename())
        for _, y, _ in load_pairs(dataset):
            assert np.array_equal(y.data, reference.data)

    def test_missing_file_reported(self, tmp_path):
        generate_dataset(1, RenderConfig(resolution=32), tmp_path / "m", seed=0)
        (tmp_path / "m" / "scene0000" / "N_2500.png").unlink()
        with pytest.raises(FileNotFoundError):
            list(load_pairs(tmp_path / "m"))

    def test_training_set_shapes(self, dataset):
        data = load_training_set(dataset)
        assert len(data) == 40
        assert data.x.dtype == np.uint8
        x, y, y_sf = data.triples(np.array([0, 5]))
        assert x.shape == (2, 3, 32, 32)
        assert y.shape == (2, 3, 32, 32)
        assert y_sf.shape == (2, 3, 32, 32)
