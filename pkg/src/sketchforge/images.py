"""Image value types shared across rendering, dataset synthesis and placement."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage


class EmptySketch(ValueError):
    pass


@dataclass(frozen=True)
class SilhouetteImage:
    """Per-pixel object coverage in [0, 1]; hard silhouettes are strictly {0, 1}."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("silhouette must be a 2D array")
        if v.size and (v.min() < -1e-12 or v.max() > 1 + 1e-12):
            raise ValueError("silhouette values must lie in [0, 1]")
        v = np.clip(v, 0.0, 1.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SketchImage:
    """Binary sketch: 0 = pen stroke, 1 = background."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("sketch must be a 2D array")
        if not np.isin(v, (0.0, 1.0)).all():
            raise ValueError("sketch must be strictly binary")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def stroke_mask(self) -> np.ndarray:
        return self.values == 0.0

    def stroke_count(self) -> int:
        return int((self.values == 0.0).sum())


def fill_sketch(sketch: SketchImage) -> np.ndarray:
    """Filled interior of the sketch strokes (the silhouette the strokes outline)."""
    return ndimage.binary_fill_holes(sketch.stroke_mask()).astype(np.float64)


def silhouette_to_png_bytes(sil: SilhouetteImage) -> bytes:
    arr = np.round(255.0 * sil.values).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def sketch_to_png_bytes(sketch: SketchImage) -> bytes:
    arr = (sketch.values * 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def grayscale_from_png_bytes(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a (H, W) uint8 grayscale array."""
    img = Image.open(io.BytesIO(data)).convert("L")
    return np.asarray(img, dtype=np.uint8)


def depth_to_png_bytes(depth_m: np.ndarray) -> bytes:
    """Encode a metric depth map as 16-bit PNG millimeters (0 = invalid)."""
    mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(mm).save(buf, format="PNG")
    return buf.getvalue()


def depth_from_png_bytes(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    mm = np.asarray(img, dtype=np.float64)
    return mm / 1000.0
