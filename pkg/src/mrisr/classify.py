"""Measurement-domain patch classification into smooth / texture / edge.

Blocks are projected through a seeded Gaussian measurement matrix and
scored by the spread of the resulting measurement vector.  Flat blocks
score exactly zero because the block mean is removed before projection;
two thresholds then split the score range into the three classes.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .cs import MeasurementMatrix, gaussian_matrix
from .image import Image
from .patches import Patch, PatchGrid


class PatchClass(enum.Enum):
    SMOOTH = 0
    TEXTURE = 1
    EDGE = 2


# Grayscale levels used when rendering a class map image.
CLASS_LEVELS = {PatchClass.SMOOTH: 0, PatchClass.TEXTURE: 128, PatchClass.EDGE: 255}


@dataclass(frozen=True)
class ClassifierConfig:
    """Block size, sampling rate, thresholds, and the matrix seed.

    ``feature_scale`` rescales the raw measurement spread so the default
    thresholds T1/T2 land correctly for 8x8 blocks on the 0..255 range; the
    default (block_size**2) was frozen after a one-time calibration sweep
    and makes the score track block_size^4 * pixel variance.  Recalibrate
    with the CLI ``sweep`` command when using other block sizes.
    """

    block_size: int = 8
    sampling_rate: float = 0.4
    t1: float = 3e6
    t2: float = 3e7
    seed: int = 0
    feature_scale: float | None = None

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError("block_size must be >= 2")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling_rate must be in (0, 1], got {self.sampling_rate}")
        if not 0 < self.t1 < self.t2:
            raise ValueError(f"need 0 < t1 < t2, got t1={self.t1}, t2={self.t2}")
        if self.sampling_rate < 0.4:
            warnings.warn(
                f"sampling rate {self.sampling_rate} below 0.4 degrades "
                "classification reliability",
                stacklevel=2,
            )

    @property
    def resolved_feature_scale(self) -> float:
        if self.feature_scale is not None:
            return float(self.feature_scale)
        return float(self.block_size**2)

    @property
    def measurement_rows(self) -> int:
        n = self.block_size**2
        return min(n, max(1, int(round(self.sampling_rate * n))))


def measurement_matrix_for(cfg: ClassifierConfig) -> MeasurementMatrix:
    return gaussian_matrix(cfg.measurement_rows, cfg.block_size**2, cfg.seed)


def measure_patch(p, phi: MeasurementMatrix) -> np.ndarray:
    """Project a patch through the measurement matrix (row-major flattening)."""
    values = p.values if isinstance(p, Patch) else np.asarray(p, dtype=np.float64)
    vec = values.ravel()
    if vec.shape[0] != phi.n:
        raise ValueError(
            f"matrix has {phi.n} columns but patch flattens to {vec.shape[0]}"
        )
    return phi.entries @ vec


def activity_feature(y: np.ndarray) -> float:
    """Unnormalized spread of a measurement vector: sum((y - mean(y))^2)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] < 2:
        raise ValueError("need at least 2 measurements")
    d = y - y.mean()
    return float(d @ d)


def _block_scores(blocks: np.ndarray, cfg: ClassifierConfig, phi: MeasurementMatrix) -> np.ndarray:
    # blocks: (N, block_size^2).  Mean-removed so flat blocks score exactly 0.
    centered = blocks - blocks.mean(axis=1, keepdims=True)
    y = centered @ phi.entries.T
    dev = y - y.mean(axis=1, keepdims=True)
    return cfg.resolved_feature_scale * np.einsum("ij,ij->i", dev, dev)


def _classes_from_scores(scores: np.ndarray, cfg: ClassifierConfig) -> np.ndarray:
    # Half-open bands: [0, t1) smooth, [t1, t2) texture, [t2, inf) edge.
    out = np.full(scores.shape, PatchClass.TEXTURE.value, dtype=np.int64)
    out[scores < cfg.t1] = PatchClass.SMOOTH.value
    out[scores >= cfg.t2] = PatchClass.EDGE.value
    return out


def classify_patch(p, cfg: ClassifierConfig, phi: MeasurementMatrix) -> PatchClass:
    """Classify one block_size x block_size patch."""
    values = p.values if isinstance(p, Patch) else np.asarray(p, dtype=np.float64)
    if values.shape != (cfg.block_size, cfg.block_size):
        raise ValueError(
            f"patch shape {values.shape} does not match block size {cfg.block_size}"
        )
    score = _block_scores(values.reshape(1, -1), cfg, phi)[0]
    return PatchClass(_classes_from_scores(np.array([score]), cfg)[0])


def classify_blocks(
    blocks: np.ndarray, cfg: ClassifierConfig, phi: MeasurementMatrix
) -> np.ndarray:
    """Vectorized classification of (N, block_size^2) rows; returns class ints."""
    return _classes_from_scores(_block_scores(blocks, cfg, phi), cfg)


def block_origin_for_patch(
    origin: tuple, patch_size: int, block_size: int, image_shape: tuple
) -> tuple:
    """Origin of the classification block co-centered with a smaller patch.

    Clamped so the block stays inside the image; this bridges the smaller
    reconstruction patch size to the classifier's block size.
    """
    r, c = origin
    h, w = image_shape
    br = min(max(r + (patch_size - block_size) // 2, 0), h - block_size)
    bc = min(max(c + (patch_size - block_size) // 2, 0), w - block_size)
    return br, bc


def zigzag_indices(side: int) -> np.ndarray:
    """Flat indices of a side x side grid in zigzag (anti-diagonal) order."""
    order = []
    for s in range(2 * side - 1):
        coords = [(i, s - i) for i in range(side) if 0 <= s - i < side]
        if s % 2 == 1:
            coords.reverse()
        order.extend(i * side + j for i, j in coords)
    return np.array(order, dtype=np.int64)


def dct_coefficients(blocks: np.ndarray, side: int) -> np.ndarray:
    """Orthonormal 2-D DCT of (N, side^2) rows, zigzag-ordered."""
    grids = blocks.reshape(-1, side, side)
    coeffs = sfft.dctn(grids, axes=(1, 2), norm="ortho").reshape(len(blocks), -1)
    return coeffs[:, zigzag_indices(side)]


def _covariance_pair(patches, phi: MeasurementMatrix, dct_dim: int):
    if isinstance(patches, PatchGrid):
        rows = np.stack([p.values.ravel() for p in patches.patches])
    else:
        rows = np.stack([np.asarray(p, dtype=np.float64).ravel() for p in patches])
    if rows.shape[0] < 2:
        raise ValueError("need at least 2 patches")
    side = int(round(rows.shape[1] ** 0.5))
    if side * side != rows.shape[1]:
        raise ValueError("patches must be square")
    if not 1 <= dct_dim <= rows.shape[1]:
        raise ValueError(f"dct_dim must be in [1, {rows.shape[1]}]")
    y = rows @ phi.entries.T
    q = dct_coefficients(rows, side)[:, :dct_dim]
    cy = np.cov(y, rowvar=False)
    cq = np.cov(q, rowvar=False)
    return np.atleast_2d(cy), np.atleast_2d(cq)


def covariance_linearity_check(patches, phi: MeasurementMatrix, dct_dim: int) -> float:
    """Shape mismatch between measurement and frequency covariances.

    Both sample covariances are trace-normalized before comparison (the
    predicted n/m scale factor cancels under that normalization), so the
    returned relative Frobenius error is 0 when the two covariances are
    exact scalar multiples.  Requires dct_dim == rows(phi) so the matrices
    are comparable.
    """
    cy, cq = _covariance_pair(patches, phi, dct_dim)
    if cy.shape != cq.shape:
        raise ValueError(
            f"covariances not comparable: {cy.shape} vs {cq.shape}; "
            "use dct_dim equal to the measurement count"
        )
    ty = float(np.trace(cy))
    tq = float(np.trace(cq))
    if ty <= 1e-18 and tq <= 1e-18:  # identical patches: both covariances vanish
        return 0.0
    ny = cy / ty
    nq = cq / tq
    return float(np.linalg.norm(ny - nq) / np.linalg.norm(nq))


def covariance_trace_ratio(patches, phi: MeasurementMatrix, dct_dim: int) -> float:
    """trace(C_y) / trace(C_q); approximately n/m for flat-spectrum patches."""
    cy, cq = _covariance_pair(patches, phi, dct_dim)
    tq = float(np.trace(cq))
    if tq == 0.0:
        raise ValueError("frequency covariance has zero trace")
    return float(np.trace(cy)) / tq


def class_map(img: Image, cfg: ClassifierConfig, phi: MeasurementMatrix):
    """Non-overlapping block classification of a whole image.

    Returns (map_image, counts) where the map paints each block 0/128/255
    for smooth/texture/edge and counts is a dict per class.
    """
    from .patches import extract_patches, grid_origins, patch_matrix

    grid = extract_patches(img, cfg.block_size, 0)
    origins = grid_origins(grid)
    blocks = patch_matrix(img.data, origins, cfg.block_size)
    classes = classify_blocks(blocks, cfg, phi)
    out = np.zeros(img.shape)
    counts = {pc: 0 for pc in PatchClass}
    for (r, c), cls in zip(origins, classes):
        pc = PatchClass(int(cls))
        counts[pc] += 1
        out[r : r + cfg.block_size, c : c + cfg.block_size] = CLASS_LEVELS[pc]
    return Image(out), counts
