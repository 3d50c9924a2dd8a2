"""Deterministic synthetic phantoms with labeled smooth/texture/edge regions.

Desk-scale stand-ins for MRI slices: every generator is a pure function of
(size, kind, seed) and returns both the image and a per-pixel region label
map (0 smooth, 1 texture, 2 edge) for classifier and experiment checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import Image

LABEL_SMOOTH = 0
LABEL_TEXTURE = 1
LABEL_EDGE = 2

KINDS = ("disks", "shepp-like", "checker-edge")


@dataclass(frozen=True, eq=False)
class LabeledPhantom:
    image: Image
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int8)
        if lab.shape != self.image.shape:
            raise ValueError("label map must match the image shape")
        lab = lab.copy()
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)


def _structure_edges(clean: np.ndarray, threshold: float = 40.0) -> np.ndarray:
    """Pixels whose 3x3 local range on the noise-free image exceeds threshold."""
    from scipy import ndimage

    local_range = ndimage.maximum_filter(clean, size=3) - ndimage.minimum_filter(
        clean, size=3
    )
    return local_range > threshold


def _disks(width, height, rng):
    data = np.full((height, width), 10.0)
    data += rng.normal(0.0, 2.0, data.shape)
    clean = np.full((height, width), 10.0)
    labels = np.zeros((height, width), dtype=np.int8)
    yy, xx = np.mgrid[0:height, 0:width]

    # Texture band along the top: zero-mean noise rich in high frequencies.
    tr0, tr1 = int(0.06 * height), int(0.26 * height)
    tc0, tc1 = int(0.52 * width), int(0.95 * width)
    data[tr0:tr1, tc0:tc1] = 125.0 + rng.normal(0.0, 45.0, (tr1 - tr0, tc1 - tc0))
    labels[tr0:tr1, tc0:tc1] = LABEL_TEXTURE

    # Flat bright disks on the flat floor; disks never touch each other or
    # the texture band, so every boundary survives intact.
    min_dim = min(width, height)
    placed = []
    for _ in range(3):
        for _attempt in range(200):
            radius = rng.uniform(min_dim / 7.0, min_dim / 4.2)
            cy = rng.uniform(radius + 2, height - radius - 2)
            cx = rng.uniform(radius + 2, width - radius - 2)
            clear_of_texture = (
                cy - radius > tr1 + 3 or cx + radius < tc0 - 3 or cx - radius > tc1 + 3
            )
            clear_of_disks = all(
                np.hypot(cy - py, cx - px) > radius + pr + 5 for py, px, pr in placed
            )
            if clear_of_texture and clear_of_disks:
                placed.append((cy, cx, radius))
                break
    for cy, cx, radius in placed:
        value = rng.uniform(235.0, 250.0)
        inside = np.hypot(yy - cy, xx - cx) <= radius
        data[inside] = value
        clean[inside] = value
    labels[_structure_edges(clean)] = LABEL_EDGE
    return data, labels


# (cy, cx, semi_y, semi_x, angle_deg, value) in unit coordinates.
_SHEPP_ELLIPSES = (
    (0.0, 0.0, 0.92, 0.69, 0.0, 235.0),
    (-0.0184, 0.0, 0.874, 0.6624, 0.0, 60.0),
    (0.0, 0.22, 0.31, 0.11, -18.0, 105.0),
    (0.0, -0.22, 0.41, 0.16, 18.0, 105.0),
    (0.35, 0.0, 0.25, 0.21, 0.0, 160.0),
    (0.1, 0.0, 0.046, 0.046, 0.0, 200.0),
    (-0.1, 0.0, 0.046, 0.046, 0.0, 200.0),
    (-0.605, -0.08, 0.046, 0.023, 0.0, 185.0),
    (-0.605, 0.0, 0.023, 0.023, 0.0, 210.0),
    (-0.605, 0.06, 0.046, 0.023, 0.0, 195.0),
)


def _shepp_like(width, height, rng):
    ys = np.linspace(-1.0, 1.0, height)
    xs = np.linspace(-1.0, 1.0, width)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    clean = np.zeros((height, width))
    for cy, cx, sy, sx, angle, value in _SHEPP_ELLIPSES:
        theta = np.deg2rad(angle)
        dy = yy - cy
        dx = xx - cx
        ry = dy * np.cos(theta) + dx * np.sin(theta)
        rx = -dy * np.sin(theta) + dx * np.cos(theta)
        clean[(ry / sy) ** 2 + (rx / sx) ** 2 <= 1.0] = value
    labels = np.zeros((height, width), dtype=np.int8)
    labels[_structure_edges(clean, 30.0)] = LABEL_EDGE
    data = clean + rng.normal(0.0, 1.0, clean.shape)
    return data, labels


def _checker_edge(width, height, rng):
    data = np.full((height, width), 40.0)
    labels = np.zeros((height, width), dtype=np.int8)
    yy, xx = np.mgrid[0:height, 0:width]

    split = int(0.4 * width)
    cell = 4
    checker = ((yy[:, :split] // cell) + (xx[:, :split] // cell)) % 2
    data[:, :split] = np.where(checker == 0, 85.0, 170.0)
    labels[:, :split] = LABEL_TEXTURE

    diag = (yy - 0.2 * height) - (xx - split) * (0.8 * height / max(width - split, 1))
    right = xx >= split
    data[right & (diag > 0)] = 225.0
    data[right & (diag <= 0)] = 35.0
    labels[right & (np.abs(diag) <= 2.0)] = LABEL_EDGE
    data += rng.normal(0.0, 1.5, data.shape)
    return data, labels


def phantom(width: int, height: int, kind: str, seed: int = 0) -> LabeledPhantom:
    """Generate a labeled synthetic image; deterministic for (size, kind, seed)."""
    if width < 16 or height < 16:
        raise ValueError("phantoms must be at least 16x16")
    rng = np.random.default_rng(seed)
    if kind == "disks":
        data, labels = _disks(width, height, rng)
    elif kind == "shepp-like":
        data, labels = _shepp_like(width, height, rng)
    elif kind == "checker-edge":
        data, labels = _checker_edge(width, height, rng)
    else:
        raise ValueError(f"unknown phantom kind {kind!r} (choose from {KINDS})")
    return LabeledPhantom(Image(np.clip(data, 0.0, 255.0)), labels)


def block_regions(labels: np.ndarray, block_size: int, edge_min: int = 16) -> np.ndarray:
    """Region code per non-overlapping block of the label map.

    2 where a block contains at least ``edge_min`` edge pixels, 1 where at
    least half its pixels are texture, 0 where it is pure background, and
    -1 for leftover mixed blocks.
    """
    h, w = labels.shape
    nr, nc = h // block_size, w // block_size
    out = np.full((nr, nc), -1, dtype=np.int8)
    for i in range(nr):
        for j in range(nc):
            blk = labels[
                i * block_size : (i + 1) * block_size,
                j * block_size : (j + 1) * block_size,
            ]
            if (blk == LABEL_EDGE).sum() >= edge_min:
                out[i, j] = 2
            elif (blk == LABEL_TEXTURE).sum() >= blk.size // 2:
                out[i, j] = 1
            elif (blk == LABEL_SMOOTH).all():
                out[i, j] = 0
    return out
