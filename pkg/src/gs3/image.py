"""Image buffers in linear radiometric units (gamma 1.0) plus PNG / raw float IO.

Raw dump layout: magic "GS3I", u32 width, u32 height, u32 channels, then
float32 values, little-endian, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

RAW_MAGIC = b"GS3I"


@dataclass
class ImageBuffer:
    """(H, W, C) float image, C in {1, 3}, linear values."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[2] not in (1, 3):
            raise ValueError("image must be (H, W) or (H, W, 1|3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains non-finite values")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(img: ImageBuffer | np.ndarray, path) -> None:
    """8-bit PNG; values are clamped to [0,1] and stored as-is (gamma 1.0)."""
    values = img.values if isinstance(img, ImageBuffer) else np.atleast_3d(img)
    data = to_uint8(values)
    if data.shape[2] == 1:
        Image.fromarray(data[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(data, mode="RGB").save(path)


def read_png(path, premultiply_alpha: bool = True) -> np.ndarray:
    """Load a PNG as linear floats in [0,1] (value/255, no transfer curve).

    RGBA inputs are premultiplied by alpha (training targets composite onto
    black).
    """
    im = Image.open(path)
    arr = np.asarray(im).astype(np.float64) / 255.0
    if arr.ndim == 2:
        return arr[:, :, None]
    if arr.shape[2] == 4:
        rgb = arr[:, :, :3]
        if premultiply_alpha:
            rgb = rgb * arr[:, :, 3:4]
        return rgb
    return arr[:, :, :3]


def write_raw(img: ImageBuffer | np.ndarray, path) -> None:
    values = img.values if isinstance(img, ImageBuffer) else np.atleast_3d(img)
    h, w, c = values.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(values.astype("<f4").tobytes())


def read_raw(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RAW_MAGIC:
            raise ValueError(f"bad raw image magic {magic!r}")
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(w * h * c * 4), dtype="<f4")
        if data.size != w * h * c:
            raise ValueError("truncated raw image payload")
    return data.reshape(h, w, c).astype(np.float64)


def load_image(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".raw") or path.endswith(".gs3i"):
        return read_raw(path)
    return read_png(path)
