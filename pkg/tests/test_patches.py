import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrisr.errors import InconsistentGridError
from mrisr.image import Image
from mrisr.patches import Patch, PatchGrid, aggregate_patches, extract_patches


def covered_pixels(grid, height, width):
    """Brute-force coverage oracle: mark every pixel touched by any patch."""
    mask = np.zeros((height, width), dtype=bool)
    for p in grid.patches:
        r, c = p.origin
        mask[r : r + p.size, c : c + p.size] = True
    return mask


class TestExtract:
    def test_stride_one_count(self):
        img = Image(np.zeros((8, 8)))
        grid = extract_patches(img, 5, 4)
        assert len(grid) == 16
        assert grid.row_origins == (0, 1, 2, 3)

    def test_whole_image_patch(self):
        img = Image(np.arange(64.0).reshape(8, 8))
        grid = extract_patches(img, 8, 0)
        assert len(grid) == 1
        assert grid.patches[0].origin == (0, 0)
        assert np.array_equal(grid.patches[0].values, img.data)

    def test_clamped_final_origin(self):
        img = Image(np.zeros((10, 10)))
        grid = extract_patches(img, 4, 1)  # stride 3
        assert grid.row_origins == (0, 3, 6)
        assert grid.col_origins == (0, 3, 6)
        assert len(grid) == 9
        assert covered_pixels(grid, 10, 10).all()

    def test_origins_raster_ordered(self):
        img = Image(np.zeros((9, 9)))
        grid = extract_patches(img, 3, 1)
        origins = [p.origin for p in grid.patches]
        assert origins == sorted(origins)

    def test_patch_values_match_source(self, random_image):
        grid = extract_patches(random_image, 5, 2)
        for p in grid.patches:
            r, c = p.origin
            assert np.array_equal(p.values, random_image.data[r : r + 5, c : c + 5])

    def test_size_too_large_rejected(self):
        with pytest.raises(ValueError):
            extract_patches(Image(np.zeros((4, 4))), 5, 0)

    def test_bad_overlap_rejected(self):
        img = Image(np.zeros((8, 8)))
        with pytest.raises(ValueError):
            extract_patches(img, 4, 4)
        with pytest.raises(ValueError):
            extract_patches(img, 4, -1)


class TestAggregate:
    def test_identity_on_integer_image(self, integer_image):
        grid = extract_patches(integer_image, 5, 4)
        out = aggregate_patches(grid, integer_image.width, integer_image.height)
        assert np.array_equal(out.data, integer_image.data)

    def test_identity_on_real_image(self, random_image):
        grid = extract_patches(random_image, 6, 3)
        out = aggregate_patches(grid, random_image.width, random_image.height)
        assert np.max(np.abs(out.data - random_image.data)) <= 1e-12

    def test_single_patch_round_trip(self):
        img = Image(np.arange(49.0).reshape(7, 7))
        grid = extract_patches(img, 7, 0)
        out = aggregate_patches(grid, 7, 7)
        assert np.array_equal(out.data, img.data)

    def test_overlap_averages(self):
        # two half-overlapping constant patches of 2 and 4 -> overlap mean 3
        a = Patch((0, 0), np.full((4, 4), 2.0))
        b = Patch((0, 2), np.full((4, 4), 4.0))
        grid = PatchGrid((a, b), 4, 2, (4, 6), (0,), (0, 2))
        out = aggregate_patches(grid, 6, 4)
        assert np.allclose(out.data[:, :2], 2.0)
        assert np.allclose(out.data[:, 2:4], 3.0)
        assert np.allclose(out.data[:, 4:], 4.0)

    def test_uncovered_pixel_rejected(self):
        lonely = Patch((0, 0), np.zeros((2, 2)))
        grid = PatchGrid((lonely,), 2, 0, (4, 4), (0,), (0,))
        with pytest.raises(InconsistentGridError):
            aggregate_patches(grid, 4, 4)

    def test_out_of_frame_patch_rejected(self):
        p = Patch((3, 3), np.zeros((3, 3)))
        grid = PatchGrid((p,), 3, 0, (4, 4), (3,), (3,))
        with pytest.raises(ValueError):
            aggregate_patches(grid, 4, 4)


@settings(max_examples=40, deadline=None)
@given(
    height=st.integers(6, 20),
    width=st.integers(6, 20),
    size=st.integers(2, 6),
    data=st.data(),
)
def test_extract_aggregate_identity_property(height, width, size, data):
    size = min(size, height, width)
    overlap = data.draw(st.integers(0, size - 1))
    seed = data.draw(st.integers(0, 2**16))
    pix = np.random.default_rng(seed).integers(0, 256, (height, width))
    img = Image(pix.astype(np.float64))
    grid = extract_patches(img, size, overlap)
    out = aggregate_patches(grid, width, height)
    assert np.array_equal(out.data, img.data)
