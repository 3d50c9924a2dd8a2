"""Square patch extraction and overlap-averaged reassembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InconsistentGridError
from .image import Image, _freeze


@dataclass(frozen=True, eq=False)
class Patch:
    """A square block of pixels with its source (row, col) origin."""

    origin: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 1:
            raise ValueError(f"patch values must be square 2-D, got {v.shape}")
        r, c = self.origin
        object.__setattr__(self, "origin", (int(r), int(c)))
        object.__setattr__(self, "values", _freeze(v))

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Patches in raster order plus the extraction geometry."""

    patches: tuple
    size: int
    overlap: int
    image_shape: tuple
    row_origins: tuple
    col_origins: tuple

    def __len__(self) -> int:
        return len(self.patches)


def axis_origins(dim: int, size: int, stride: int) -> list:
    """Origins along one axis; the last origin is clamped to dim - size."""
    origins = list(range(0, dim - size + 1, stride))
    if origins[-1] != dim - size:
        origins.append(dim - size)
    return origins


def extract_patches(img: Image, size: int, overlap: int) -> PatchGrid:
    """Tile ``img`` with size x size patches at stride size - overlap.

    The last row/column of patches is clamped to the image boundary so
    every pixel is covered.
    """
    if size < 1:
        raise ValueError("patch size must be >= 1")
    if size > min(img.height, img.width):
        raise ValueError(
            f"patch size {size} exceeds image dimensions {img.shape}"
        )
    if not 0 <= overlap < size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < size, got {overlap}")
    stride = size - overlap
    rows = axis_origins(img.height, size, stride)
    cols = axis_origins(img.width, size, stride)
    data = img.data
    patches = tuple(
        Patch((r, c), data[r : r + size, c : c + size])
        for r in rows
        for c in cols
    )
    return PatchGrid(patches, size, overlap, img.shape, tuple(rows), tuple(cols))


def aggregate_patches(
    grid: PatchGrid, width: int, height: int, vrange: tuple = (0.0, 255.0)
) -> Image:
    """Average overlapping patches back into a height x width image.

    Every target pixel must be covered by at least one patch; uncovered
    pixels raise :class:`InconsistentGridError`.  Accumulation runs in
    grid order, so results are bit-reproducible.
    """
    acc = np.zeros((height, width), dtype=np.float64)
    cnt = np.zeros((height, width), dtype=np.int64)
    for p in grid.patches:
        r, c = p.origin
        s = p.size
        if r < 0 or c < 0 or r + s > height or c + s > width:
            raise ValueError(f"patch at {p.origin} does not fit in {height}x{width}")
        acc[r : r + s, c : c + s] += p.values
        cnt[r : r + s, c : c + s] += 1
    if (cnt == 0).any():
        n = int((cnt == 0).sum())
        raise InconsistentGridError(f"{n} pixels uncovered by the patch grid")
    return Image(acc / cnt, vrange)


def patch_matrix(data: np.ndarray, origins: np.ndarray, size: int) -> np.ndarray:
    """Gather row-major vectorized patches at ``origins`` into an (N, size^2) array."""
    windows = sliding_window_view(data, (size, size))
    return windows[origins[:, 0], origins[:, 1]].reshape(len(origins), size * size)


def grid_origins(grid: PatchGrid) -> np.ndarray:
    """(N, 2) array of patch origins in raster order."""
    return np.array([p.origin for p in grid.patches], dtype=np.int64)
