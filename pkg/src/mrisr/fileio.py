"""PGM (binary P5) and grayscale PNG reading/writing.

8-bit PGM is the canonical interchange format: writing then reading an
integer-valued image round-trips bit-exactly.  16-bit inputs are rescaled
to the 0..255 range on load.  All writes go through a temp-file-then-rename
so partially written outputs are never observed.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .image import Image


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_pgm_tokens(blob: bytes, count: int) -> tuple:
    """First ``count`` whitespace/comment-delimited header tokens and the offset."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise ValueError("truncated PGM header")
        ch = blob[i : i + 1]
        if ch == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    return tokens, i + 1  # single whitespace after maxval precedes raster


def read_pgm(path) -> Image:
    blob = Path(path).read_bytes()
    tokens, offset = _read_pgm_tokens(blob, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (P5) file: magic {tokens[0]!r}")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if not (0 < maxval < 65536):
        raise ValueError(f"bad PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    n = width * height
    raster = np.frombuffer(blob, dtype=dtype, count=n, offset=offset)
    if raster.size != n:
        raise ValueError("truncated PGM raster")
    data = raster.reshape(height, width).astype(np.float64)
    if maxval > 255:
        data *= 255.0 / maxval
    return Image(data)


def write_pgm(img: Image, path, bits: int = 8) -> None:
    """Quantize to ``bits`` (8 or 16) and write binary PGM."""
    if bits == 8:
        maxval = 255
        raster = np.rint(np.clip(img.data, 0, 255)).astype(np.uint8)
        payload = raster.tobytes()
    elif bits == 16:
        maxval = 65535
        scaled = np.rint(np.clip(img.data, 0, 255) * (65535.0 / 255.0))
        payload = scaled.astype(">u2").tobytes()
    else:
        raise ValueError("bits must be 8 or 16")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    atomic_write_bytes(path, header + payload)


def read_png(path) -> Image:
    with PILImage.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            data = np.asarray(im, dtype=np.float64) * (255.0 / 65535.0)
        else:
            data = np.asarray(im.convert("L"), dtype=np.float64)
    return Image(data)


def write_png(img: Image, path, bits: int = 8) -> None:
    import io

    if bits == 8:
        raster = np.rint(np.clip(img.data, 0, 255)).astype(np.uint8)
        pil = PILImage.fromarray(raster, mode="L")
    elif bits == 16:
        scaled = np.rint(np.clip(img.data, 0, 255) * (65535.0 / 255.0))
        pil = PILImage.fromarray(scaled.astype(np.uint16))
    else:
        raise ValueError("bits must be 8 or 16")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_image(path) -> Image:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise ValueError(f"unsupported image format {suffix!r} (use .pgm or .png)")


def write_image(img: Image, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(img, path)
    elif suffix == ".png":
        write_png(img, path)
    else:
        raise ValueError(f"unsupported image format {suffix!r} (use .pgm or .png)")
