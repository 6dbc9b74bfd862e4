"""8-bit PNG and binary PPM/PGM I/O. float = byte/255, byte = round(float*255)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def read_image(path, mode: str | None = None) -> np.ndarray:
    """Read an image as float32 in [0,1]: ``(3,H,W)`` for ``mode='RGB'``, ``(H,W)`` for ``'L'``.

    With ``mode=None`` the file's own channel count decides.
    """
    with Image.open(path) as im:
        if mode is None:
            mode = "L" if im.mode in ("L", "1", "I", "I;16", "F") else "RGB"
        arr = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    return arr if arr.ndim == 2 else np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path, img: np.ndarray) -> None:
    """Write a ``(H,W)`` or ``(3,H,W)`` float image; format from the suffix."""
    path = Path(path)
    data = to_bytes(img)
    if data.ndim == 3:
        data = np.ascontiguousarray(data.transpose(1, 2, 0))
    im = Image.fromarray(data, mode="L" if data.ndim == 2 else "RGB")
    if path.suffix.lower() == ".png":
        # fixed encoder settings keep reruns byte-identical
        im.save(path, format="PNG", compress_level=6, optimize=False)
    elif path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        im.save(path, format="PPM")
    else:
        raise ValueError(f"unsupported image suffix {path.suffix!r}")


def image_size(path) -> tuple:
    """(width, height) without decoding pixels."""
    with Image.open(path) as im:
        return im.size
