"""8-bit RGBA rasters and binary masks: containers, PNG/JPEG io, PSNR.

Storage is uint8 end to end; every transform works in float32 and
quantizes exactly once on the way out.  Alpha = 0 means "no source data
here" (outside a map's domain), never partial transparency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError

PSNR_CAP_DB = 99.0

__all__ = ["Mask", "RasterImage", "PSNR_CAP_DB", "luma601", "psnr"]


@dataclass
class RasterImage:
    """RGBA raster, shape (height, width, 4) uint8, origin top-left, y down."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise DomainError(f"RasterImage needs (H, W, 4) uint8, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DomainError("RasterImage must be at least 1x1")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]

    def rgb_f32(self) -> np.ndarray:
        return self.pixels[:, :, :3].astype(np.float32)

    def rgba_f32(self) -> np.ndarray:
        return self.pixels.astype(np.float32)

    @classmethod
    def from_float(cls, rgb: np.ndarray, alpha: np.ndarray | None = None) -> "RasterImage":
        """Quantize float32 RGB (plus optional float/bool alpha) into storage form."""
        rgb = np.asarray(rgb, dtype=np.float32)
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[:, :, None], 3, axis=2)
        h, w = rgb.shape[:2]
        out = np.empty((h, w, 4), dtype=np.uint8)
        out[:, :, :3] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
        if alpha is None:
            out[:, :, 3] = 255
        elif alpha.dtype == bool:
            out[:, :, 3] = np.where(alpha, 255, 0).astype(np.uint8)
        else:
            out[:, :, 3] = np.clip(np.rint(np.asarray(alpha, dtype=np.float32)), 0, 255).astype(np.uint8)
        return cls(out)

    @classmethod
    def load(cls, path: str | Path) -> "RasterImage":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGBA"), dtype=np.uint8).copy())

    def save(self, path: str | Path) -> None:
        Image.fromarray(self.pixels, mode="RGBA").save(path, format="PNG")

    def copy(self) -> "RasterImage":
        return RasterImage(self.pixels.copy())


@dataclass
class Mask:
    """Binary hole mask, shape (height, width) uint8; 255 = hole, 0 = keep."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.dtype != np.uint8:
            raise DomainError(f"Mask needs (H, W) uint8, got {px.shape} {px.dtype}")
        bad = (px != 0) & (px != 255)
        if bad.any():
            raise DomainError("Mask values must be 0 or 255")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def holes(self) -> np.ndarray:
        return self.pixels == 255

    def coverage(self) -> float:
        return float(np.count_nonzero(self.pixels) / self.pixels.size)

    @classmethod
    def from_bool(cls, holes: np.ndarray) -> "Mask":
        return cls(np.where(np.asarray(holes, dtype=bool), 255, 0).astype(np.uint8))

    @classmethod
    def load(cls, path: str | Path) -> "Mask":
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.uint8)
        return cls.from_bool(gray >= 128)

    def save(self, path: str | Path) -> None:
        Image.fromarray(self.pixels, mode="L").save(path, format="PNG")


def luma601(rgb: np.ndarray) -> np.ndarray:
    """Luma on the 0..255 scale: 0.299 R + 0.587 G + 0.114 B."""
    rgb = np.asarray(rgb, dtype=np.float32)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def psnr(a: RasterImage, b: RasterImage, where: np.ndarray | None = None) -> float:
    """PSNR in dB over RGB, restricted to pixels valid (alpha=255) in both images.

    Identical selections return the 99 dB cap rather than infinity.
    """
    if a.pixels.shape != b.pixels.shape:
        raise DomainError(f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    valid = (a.alpha == 255) & (b.alpha == 255)
    if where is not None:
        valid &= np.asarray(where, dtype=bool)
    if not valid.any():
        raise DomainError("no overlapping valid pixels to compare")
    da = a.pixels[:, :, :3][valid].astype(np.float64)
    db = b.pixels[:, :, :3][valid].astype(np.float64)
    mse = float(np.mean((da - db) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(255.0**2 / mse))
