"""8-bit PNG codec and atomic file writes.

Images are handled internally as float64 ``H x W x 3`` arrays with linear
intensities in [0, 1].  Conversion to 8 bit happens only here, rounding half
up.
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image


def from_uint8(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def to_uint8(img) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def as_rgb(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def load_png(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Return (rgb in [0,1], alpha as uint8 or None)."""
    with Image.open(path) as im:
        im.load()
        alpha = None
        if im.mode in ("RGBA", "LA") or (im.mode == "P" and "transparency" in im.info):
            im = im.convert("RGBA")
            arr = np.asarray(im)
            alpha = arr[..., 3].copy()
            rgb = arr[..., :3]
        else:
            rgb = np.asarray(im.convert("RGB"))
    return from_uint8(rgb), alpha


def encode_png(img, alpha=None) -> bytes:
    data = to_uint8(as_rgb(img))
    if alpha is not None:
        data = np.dstack([data, np.asarray(alpha, dtype=np.uint8)])
        im = Image.fromarray(data, mode="RGBA")
    else:
        im = Image.fromarray(data, mode="RGB")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_png(path, img, alpha=None) -> None:
    atomic_write_bytes(path, encode_png(img, alpha))


def side_by_side(left, right, gap: int = 4) -> np.ndarray:
    """Horizontal input|output comparison strip with a white separator."""
    left, right = as_rgb(left), as_rgb(right)
    h = max(left.shape[0], right.shape[0])
    out = np.ones((h, left.shape[1] + gap + right.shape[1], 3))
    out[: left.shape[0], : left.shape[1]] = left
    out[: right.shape[0], left.shape[1] + gap :] = right
    return out
