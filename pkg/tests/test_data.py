import math

import numpy as np
import pytest

from uanet.data import (
    SceneSpec,
    generate_dataset,
    generate_scene,
    parse_pgm,
    read_manifest,
    read_mask_pgm,
    read_pgm,
    rectangle,
    split_even_odd,
    stack_batch,
    write_dataset,
    write_mask_pgm,
    write_pgm,
    write_png,
)
from uanet.serialization import FormatError


def ray_cast_inside(px: float, py: float, poly) -> bool:
    """Even-odd rule: count polygon edges crossed by a ray towards +x."""
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > py) != (y1 > py):
            x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < x_cross:
                inside = not inside
    return inside


class TestScenes:
    def test_no_buildings_gives_empty_mask(self):
        scene = generate_scene(SceneSpec(building_count=(0, 0), seed=5))
        assert not scene.mask.any()
        assert scene.polygons == []

    def test_shapes_and_ranges(self):
        scene = generate_scene(SceneSpec(extent=32, seed=1))
        assert scene.image.shape == (3, 32, 32) and scene.mask.shape == (1, 32, 32)
        assert scene.image.min() >= 0 and scene.image.max() <= 1
        assert set(np.unique(scene.mask)) <= {0.0, 1.0}

    def test_deterministic(self):
        a = generate_scene(SceneSpec(seed=17))
        b = generate_scene(SceneSpec(seed=17))
        assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
        c = generate_scene(SceneSpec(seed=18))
        assert not np.array_equal(a.image, c.image)

    def test_mask_matches_ray_casting_oracle(self):
        for scene in generate_dataset(SceneSpec(extent=32), 20, base_seed=3):
            expected = np.zeros((32, 32), dtype=bool)
            for row in range(32):
                for col in range(32):
                    expected[row, col] = any(ray_cast_inside(col + 0.5, row + 0.5, p)
                                             for p in scene.polygons)
            assert np.array_equal(scene.mask[0].astype(bool), expected), scene.seed

    def test_axis_aligned_rectangle_pixel_count(self):
        poly = rectangle(8.0, 8.0, 6.0, 4.0, 0.0)
        assert np.isclose(poly, [[5, 6], [11, 6], [11, 10], [5, 10]]).all()
        rot = rectangle(0, 0, 2, 2, math.pi / 2)
        np.testing.assert_allclose(np.abs(rot), 1.0, atol=1e-12)

    @pytest.mark.parametrize("bad", [dict(building_count=(3, 1)), dict(size_range=(0, 4)),
                                     dict(extent=40), dict(noise=-1), dict(shadow_prob=2)])
    def test_spec_validation(self, bad):
        with pytest.raises(ValueError):
            SceneSpec(**bad).validate()

    def test_even_odd_split_and_batching(self):
        scenes = generate_dataset(SceneSpec(extent=16), 5, base_seed=0)
        train, val = split_even_odd(scenes)
        assert [s.seed for s in train] == [scenes[0].seed, scenes[2].seed, scenes[4].seed]
        assert [s.seed for s in val] == [scenes[1].seed, scenes[3].seed]
        images, masks = stack_batch(train)
        assert images.shape == (3, 3, 16, 16) and masks.shape == (3, 1, 16, 16)
        assert images.dtype == np.float32


class TestPGM:
    def test_round_trip(self, tmp_path, rng):
        raster = rng.integers(0, 256, size=(5, 7)).astype(np.uint8)
        write_pgm(tmp_path / "r.pgm", raster)
        assert np.array_equal(read_pgm(tmp_path / "r.pgm"), raster)

    def test_mask_round_trip(self, tmp_path):
        mask = generate_scene(SceneSpec(extent=16, seed=2)).mask
        write_mask_pgm(tmp_path / "m.pgm", mask)
        assert np.array_equal(read_mask_pgm(tmp_path / "m.pgm"), mask)
        assert set(np.unique(read_pgm(tmp_path / "m.pgm"))) <= {0, 255}

    def test_header_comments(self):
        assert parse_pgm(b"P5\n# made by hand\n2 1\n255\n\x00\xff").tolist() == [[0, 255]]

    @pytest.mark.parametrize("blob", [b"P6\n1 1\n255\n\x00", b"P5\n2 2\n255\n\x00",
                                      b"P5\n1 1\n65535\n\x00\x00", b"P5\nx 1\n255\n\x00", b""])
    def test_malformed(self, blob):
        with pytest.raises(FormatError):
            parse_pgm(blob)

    def test_png_export(self, tmp_path):
        from PIL import Image

        raster = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        write_png(tmp_path / "r.png", raster)
        assert np.array_equal(np.asarray(Image.open(tmp_path / "r.png")), raster)


def test_dataset_manifest_round_trip(tmp_path):
    scenes = generate_dataset(SceneSpec(extent=16), 3, base_seed=9)
    manifest = write_dataset(tmp_path, scenes, "train")
    back = read_manifest(manifest)
    assert [s.seed for s in back] == [s.seed for s in scenes]
    for a, b in zip(scenes, back):
        assert np.array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(b.image, a.image.astype(np.float32))
