import numpy as np
import pytest

from oracles import region_branch_area, region_stability_sweep
from rgbdpose.errors import DataError
from rgbdpose.preprocess import MserParams, detect_stable_regions, remove_background
from rgbdpose.types import RgbdFrame


def frame_from_depth(depth, figure_color=180):
    rgb = np.zeros(depth.shape + (3,), dtype=np.uint8)
    rgb[depth > 0] = figure_color
    return RgbdFrame(rgb=rgb, depth=depth.astype(np.uint16), index=0)


class TestParams:
    def test_validation(self):
        with pytest.raises(DataError):
            MserParams(delta=0)
        with pytest.raises(DataError):
            MserParams(min_area=0)
        with pytest.raises(DataError):
            MserParams(min_area=100, max_area=100)


class TestDetect:
    def test_constant_image_single_region(self):
        depth = np.full((64, 64), 2000, np.uint16)
        regions = detect_stable_regions(depth, MserParams(min_area=10))
        assert len(regions) == 1
        assert regions[0].area == 64 * 64
        assert regions[0].stability == 0.0

    def test_block_on_background(self):
        """Foreground block and background each stable; brute-force sweep agrees."""
        depth = np.full((64, 64), 4000, np.uint16)
        depth[10:26, 10:26] = 1000
        params = MserParams(min_area=10, max_area=4000)
        regions = detect_stable_regions(depth, params)
        assert sorted(r.area for r in regions) == [256, 3840]
        block = next(r for r in regions if r.area == 256)
        mask = block.mask()
        assert mask[10:26, 10:26].all() and mask.sum() == 256
        for r in regions:
            swept = region_stability_sweep(depth, r, levels=params.levels)
            assert swept == pytest.approx(r.stability, abs=1e-9)

    def test_uniform_noise_has_no_stable_regions(self):
        """i.i.d. uniform 16-bit noise: nothing above min_area survives the
        stability cutoff; thresholds chosen so the sweep window sees real
        area change."""
        params = MserParams(delta=8, min_area=30, max_area=1024,
                            stability_cutoff=0.1, levels=64)
        for seed in range(3):
            depth = np.random.default_rng(seed).integers(
                1, 65536, size=(64, 64)).astype(np.uint16)
            assert detect_stable_regions(depth, params) == []

    def test_all_invalid_returns_empty(self):
        assert detect_stable_regions(np.zeros((32, 32), np.uint16), MserParams()) == []

    def test_sorted_by_area_descending(self):
        depth = np.full((64, 64), 4000, np.uint16)
        depth[4:20, 4:20] = 1000
        depth[30:38, 30:38] = 900
        regions = detect_stable_regions(depth, MserParams(min_area=10, max_area=4096))
        areas = [r.area for r in regions]
        assert areas == sorted(areas, reverse=True)

    def test_area_bounds_respected(self, rng):
        depth = np.full((64, 64), 4000, np.uint16)
        depth[10:26, 10:26] = 1000
        params = MserParams(min_area=300, max_area=4000)
        regions = detect_stable_regions(depth, params)
        assert all(300 <= r.area <= 4000 for r in regions)

    def test_extremality_against_direct_threshold(self):
        """Each region equals the component containing its seed at its level."""
        depth = np.full((48, 48), 3000, np.uint16)
        depth[5:15, 5:15] = 1200
        depth[30:44, 28:45] = 800
        params = MserParams(min_area=20, max_area=2000)
        regions = detect_stable_regions(depth, params)
        assert regions
        for r in regions:
            area = region_branch_area(depth, r.polarity, params.levels, r.seed, r.level)
            assert area == r.area


class TestRemoveBackground:
    def test_noop_when_below_threshold(self):
        depth = np.full((32, 32), 1500, np.uint16)
        depth[8:16, 8:16] = 900
        frame = frame_from_depth(depth)
        out, mask = remove_background(frame, MserParams(min_area=5, area_threshold=2000))
        assert (out.depth == frame.depth).all()
        assert (out.rgb == frame.rgb).all()
        assert mask.all()

    def test_background_zeroed_foreground_intact(self):
        depth = np.full((64, 64), 4000, np.uint16)
        depth[20:36, 20:36] = 1000
        frame = frame_from_depth(depth)
        out, mask = remove_background(frame, MserParams(min_area=10, area_threshold=1024))
        fg = np.zeros((64, 64), bool)
        fg[20:36, 20:36] = True
        assert (out.depth[fg] == 1000).all()
        assert (out.depth[~fg] == 0).all()
        assert (out.rgb[~fg] == 0).all()
        assert (mask == fg.astype(np.uint8)).all()

    def test_untouched_pixels_bit_identical(self, rng):
        depth = np.clip(4000 + rng.normal(0, 30, (64, 64)), 1, 65535).astype(np.uint16)
        depth[20:40, 10:30] = 1000
        rgb = rng.integers(0, 255, (64, 64, 3)).astype(np.uint8)
        frame = RgbdFrame(rgb=rgb, depth=depth, index=0)
        out, mask = remove_background(frame, MserParams(min_area=10, area_threshold=1024))
        kept = mask.astype(bool)
        assert (out.depth[kept] == frame.depth[kept]).all()
        assert (out.rgb[kept] == frame.rgb[kept]).all()

    def test_mask_matches_zeroing(self, rng):
        depth = np.clip(3500 + rng.normal(0, 40, (64, 64)), 1, 65535).astype(np.uint16)
        depth[10:40, 10:40] = 1200
        frame = frame_from_depth(depth)
        out, mask = remove_background(frame, MserParams())
        nonzero_in = frame.depth > 0
        assert ((out.depth == 0) == (mask == 0))[nonzero_in].all()

    def test_invalid_pixels_always_background(self):
        depth = np.full((32, 32), 2000, np.uint16)
        depth[0:4, 0:4] = 0
        frame = frame_from_depth(depth)
        out, mask = remove_background(frame, MserParams(min_area=5, area_threshold=2000))
        assert (mask[0:4, 0:4] == 0).all()
        assert (out.rgb[0:4, 0:4] == 0).all()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        depth = np.clip(3500 + rng.normal(0, 40, (64, 64)), 1, 65535).astype(np.uint16)
        depth[16:48, 20:44] = 1500
        frame = frame_from_depth(depth)
        params = MserParams(min_area=10)
        once, mask1 = remove_background(frame, params)
        twice, mask2 = remove_background(once, params)
        assert (once.depth == twice.depth).all()
        assert (once.rgb == twice.rgb).all()
        assert (mask1 == mask2).all()

    def test_stability_recompute_from_stored_fields(self, rng):
        """Stored stability is reproduced by an explicit threshold sweep."""
        depth = np.clip(3500 + rng.normal(0, 40, (96, 96)), 1, 65535).astype(np.uint16)
        depth[20:70, 30:80] = 1500
        params = MserParams(min_area=20)
        regions = detect_stable_regions(depth, params)
        assert regions
        for region in regions:
            swept = region_stability_sweep(depth, region, levels=params.levels)
            assert swept == pytest.approx(region.stability, abs=1e-9)
