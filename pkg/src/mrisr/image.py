"""Grayscale image container, HR->LR degradation model, and resampling.

Images are 2-D float64 rasters with an attached dynamic range (default
0..255).  All operations are pure: they never mutate their inputs and the
pixel buffers of constructed images are marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Image:
    """A 2-D grayscale raster with a declared dynamic range.

    Parameters
    ----------
    data : np.ndarray
        2-D array of pixel values, converted to float64 and frozen.
    vrange : tuple of float
        Declared (low, high) dynamic range, default (0, 255).
    """

    data: np.ndarray
    vrange: tuple = (0.0, 255.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite pixel values")
        lo, hi = self.vrange
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"invalid dynamic range {self.vrange}")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "vrange", (float(lo), float(hi)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalized 2-D Gaussian low-pass kernel, truncated at ``radius``.

    The default radius is ceil(3*sigma); the kernel is renormalized to sum
    exactly to 1 so constant images pass through unchanged.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    radius = max(int(radius), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


@dataclass(frozen=True, eq=False)
class DegradationModel:
    """Blur-then-decimate model taking an HR image to its LR observation."""

    blur_kernel: np.ndarray
    scale: int

    def __post_init__(self):
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        k = np.asarray(self.blur_kernel, dtype=np.float64)
        if k.ndim != 2:
            raise ValueError("blur kernel must be 2-D")
        if abs(k.sum() - 1.0) > 1e-12:
            raise ValueError(f"blur kernel must sum to 1, sums to {k.sum()!r}")
        if not np.allclose(k, k[::-1, ::-1], atol=1e-12):
            raise ValueError("blur kernel must be symmetric")
        object.__setattr__(self, "blur_kernel", _freeze(k))
        object.__setattr__(self, "scale", int(self.scale))

    @classmethod
    def default(cls, scale: int, sigma: float | None = None) -> "DegradationModel":
        """Gaussian blur with sigma = 0.8 * scale / 2, truncated at 3 sigma."""
        if sigma is None:
            sigma = 0.8 * scale / 2.0
        return cls(gaussian_kernel(sigma), scale)


def degrade(img: Image, model: DegradationModel) -> Image:
    """Blur ``img`` with the model kernel and decimate by the model scale.

    Dimensions that are not multiples of the scale are first extended by
    replicate padding, so the output is always ceil(dims / scale).
    """
    s = model.scale
    data = img.data
    pad_r = (-data.shape[0]) % s
    pad_c = (-data.shape[1]) % s
    if pad_r or pad_c:
        data = np.pad(data, ((0, pad_r), (0, pad_c)), mode="edge")
    blurred = ndimage.convolve(data, model.blur_kernel, mode="nearest")
    return Image(blurred[::s, ::s], img.vrange)


def modcrop(img: Image, scale: int) -> Image:
    """Crop the bottom/right border so both dimensions divide ``scale``."""
    h = img.height - img.height % scale
    w = img.width - img.width % scale
    if h < 1 or w < 1:
        raise ValueError("image smaller than one scale step")
    if (h, w) == img.shape:
        return img
    return Image(img.data[:h, :w], img.vrange)


def _keys_cubic(x: np.ndarray) -> np.ndarray:
    # Keys cubic convolution kernel with a = -0.5.
    a = -0.5
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * (x3 - 5.0 * x2 + 8.0 * x - 4.0)
    return np.where(x < 1.0, near, np.where(x < 2.0, far, 0.0))


def _resample_axis0(data: np.ndarray, out_len: int) -> np.ndarray:
    in_len = data.shape[0]
    if out_len == in_len:
        return data.copy()
    # Pixel-center alignment: output i samples the source at (i+0.5)/f - 0.5.
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    offsets = np.array([-1, 0, 1, 2], dtype=np.int64)
    idx = np.clip(base[:, None] + offsets[None, :], 0, in_len - 1)
    w = _keys_cubic(t[:, None] - offsets[None, :].astype(np.float64))
    return np.einsum("ot,otc->oc", w, data[idx])


def bicubic_resample(img: Image, factor: float) -> Image:
    """Separable Keys bicubic resampling by ``factor`` (replicate borders)."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    out_h = int(math.floor(img.height * factor + 0.5))
    out_w = int(math.floor(img.width * factor + 0.5))
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate output size {out_h}x{out_w}")
    out = _resample_axis0(img.data, out_h)
    out = _resample_axis0(out.T, out_w).T
    return Image(out, img.vrange)


# ITU-R BT.601 full-range YCbCr coefficients.
_YC = (0.299, 0.587, 0.114)
_CB = (-0.168736, -0.331264, 0.5)
_CR = (0.5, -0.418688, -0.081312)


def luma_extract(rgb: np.ndarray) -> tuple:
    """Split an (H, W, 3) RGB raster into (Y, Cb, Cr) images (BT.601).

    Values are on the 0..255 scale; Cb/Cr are centered at 128.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape}")
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    y = _YC[0] * r + _YC[1] * g + _YC[2] * b
    cb = 128.0 + _CB[0] * r + _CB[1] * g + _CB[2] * b
    cr = 128.0 + _CR[0] * r + _CR[1] * g + _CR[2] * b
    return Image(y), Image(cb), Image(cr)


def luma_merge(y: Image, cb: Image, cr: Image) -> np.ndarray:
    """Inverse of :func:`luma_extract`; returns an (H, W, 3) RGB array."""
    if not (y.shape == cb.shape == cr.shape):
        raise ValueError(
            f"channel size mismatch: {y.shape}, {cb.shape}, {cr.shape}"
        )
    yv = y.data
    cbv = cb.data - 128.0
    crv = cr.data - 128.0
    r = yv + 1.402 * crv
    g = yv - 0.344136 * cbv - 0.714136 * crv
    b = yv + 1.772 * cbv
    return np.stack([r, g, b], axis=-1)
