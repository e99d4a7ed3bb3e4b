"""Hole masks: blank-region extraction, seeded random large masks, classification.

The random generator mixes large free-form shapes (rectangles, ellipses,
thick strokes) under an explicit coverage budget, fully determined by
(seed, width, height).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .raster import Mask, RasterImage

log = logging.getLogger(__name__)

__all__ = ["MaskClass", "MaskSpec", "classify", "extract_blank", "random_mask"]

_SHAPE_NAMES = ("rectangle", "ellipse", "stroke")


class MaskClass(enum.Enum):
    PURE_INPAINT = "pure_inpaint"
    CONTAINS_OUTPAINT = "contains_outpaint"


@dataclass(frozen=True)
class MaskSpec:
    """Recipe for one reproducible random mask."""

    seed: int
    coverage_range: tuple[float, float] = (0.15, 0.45)
    shape_mix: dict[str, float] = field(default_factory=lambda: {n: 1.0 for n in _SHAPE_NAMES})
    allow_border_contact: bool = True

    def __post_init__(self) -> None:
        lo, hi = self.coverage_range
        if not (0.0 < lo <= hi < 0.9):
            raise DomainError(f"coverage_range must satisfy 0 < lo <= hi < 0.9, got {self.coverage_range}")
        unknown = set(self.shape_mix) - set(_SHAPE_NAMES)
        if unknown:
            raise DomainError(f"unknown shape names: {sorted(unknown)}")
        weights = [float(self.shape_mix.get(n, 0.0)) for n in _SHAPE_NAMES]
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise DomainError("shape weights must be nonnegative and not all zero")


# ---------------------------------------------------------------------------
# blank extraction

def extract_blank(image: RasterImage, whiteness_threshold: int = 250, dilation_px: int = 2) -> Mask:
    """Extract the near-white blank region: the largest near-white connected
    component plus any component its dilation touches, dilated by dilation_px.

    Finding no near-white pixels is not an error; it returns an empty mask
    and logs a warning (an unrolled window may simply contain no blank).
    """
    if not (0 <= whiteness_threshold <= 255):
        raise DomainError(f"whiteness_threshold must be in 0..255, got {whiteness_threshold}")
    if dilation_px < 0:
        raise DomainError(f"dilation_px must be >= 0, got {dilation_px}")
    rgb = image.pixels[:, :, :3]
    near_white = (rgb.min(axis=2) >= whiteness_threshold) & (image.alpha == 255)
    if not near_white.any():
        log.warning("extract_blank found no near-white pixels (threshold %d)", whiteness_threshold)
        return Mask.from_bool(np.zeros(near_white.shape, dtype=bool))

    eight = np.ones((3, 3), dtype=bool)
    labels, count = ndimage.label(near_white, structure=eight)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    seed_label = int(sizes.argmax())
    region = labels == seed_label
    if dilation_px > 0:
        reach = ndimage.binary_dilation(region, structure=eight, iterations=dilation_px)
        touched = np.unique(labels[reach & near_white])
        region = np.isin(labels, touched[touched > 0])
        region = ndimage.binary_dilation(region, structure=eight, iterations=dilation_px)
    return Mask.from_bool(region)


# ---------------------------------------------------------------------------
# random large masks

def _paint_rectangle(holes: np.ndarray, rng: np.random.Generator) -> None:
    h, w = holes.shape
    scale = min(h, w)
    rw = int(rng.uniform(0.12, 0.35) * scale)
    rh = int(rng.uniform(0.12, 0.35) * scale)
    x0 = int(rng.uniform(0, max(1, w - rw)))
    y0 = int(rng.uniform(0, max(1, h - rh)))
    holes[y0 : y0 + max(1, rh), x0 : x0 + max(1, rw)] = True


def _paint_ellipse(holes: np.ndarray, rng: np.random.Generator) -> None:
    h, w = holes.shape
    scale = min(h, w)
    ax = rng.uniform(0.08, 0.2) * scale
    ay = rng.uniform(0.08, 0.2) * scale
    cx = rng.uniform(ax, w - ax) if w > 2 * ax else w / 2
    cy = rng.uniform(ay, h - ay) if h > 2 * ay else h / 2
    theta = rng.uniform(0, math.pi)
    pad = int(max(ax, ay)) + 2
    x0, x1 = max(0, int(cx) - pad), min(w, int(cx) + pad + 1)
    y0, y1 = max(0, int(cy) - pad), min(h, int(cy) + pad + 1)
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    ct, st = math.cos(theta), math.sin(theta)
    u = (ct * dx + st * dy) / ax
    v = (-st * dx + ct * dy) / ay
    holes[y0:y1, x0:x1] |= u * u + v * v <= 1.0


def _paint_stroke(holes: np.ndarray, rng: np.random.Generator) -> None:
    h, w = holes.shape
    scale = min(h, w)
    thickness = rng.uniform(0.04, 0.09) * scale
    segments = int(rng.integers(2, 5))
    x = rng.uniform(0.2 * w, 0.8 * w)
    y = rng.uniform(0.2 * h, 0.8 * h)
    angle = rng.uniform(0, 2 * math.pi)
    radius = thickness / 2.0
    for _ in range(segments):
        angle += rng.uniform(-1.0, 1.0)
        length = rng.uniform(0.12, 0.3) * scale
        steps = max(2, int(length / max(1.0, radius / 2.0)))
        for t in np.linspace(0.0, 1.0, steps):
            px = x + t * length * math.cos(angle)
            py = y + t * length * math.sin(angle)
            pad = int(radius) + 2
            x0, x1 = max(0, int(px) - pad), min(w, int(px) + pad + 1)
            y0, y1 = max(0, int(py) - pad), min(h, int(py) + pad + 1)
            if x0 >= x1 or y0 >= y1:
                continue
            ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
            holes[y0:y1, x0:x1] |= (xs - px) ** 2 + (ys - py) ** 2 <= radius * radius
        x += length * math.cos(angle)
        y += length * math.sin(angle)


_PAINTERS = {"rectangle": _paint_rectangle, "ellipse": _paint_ellipse, "stroke": _paint_stroke}


def random_mask(spec: MaskSpec, width: int, height: int) -> Mask:
    """Deterministic random hole mask for (spec.seed, width, height).

    Shapes accumulate until coverage reaches a target drawn inside
    coverage_range; a draw that overshoots the upper bound is discarded and
    retried, up to 1000 attempts.
    """
    if width < 8 or height < 8:
        raise DomainError(f"mask dimensions too small: {width}x{height}")
    lo, hi = spec.coverage_range
    seed = int(spec.seed) & (2**64 - 1)
    rng = np.random.default_rng(np.random.SeedSequence([seed, width, height]))
    names = list(_SHAPE_NAMES)
    weights = np.array([float(spec.shape_mix.get(n, 0.0)) for n in names], dtype=np.float64)
    probs = weights / weights.sum()

    for _ in range(1000):
        holes = np.zeros((height, width), dtype=bool)
        # aim below the ceiling so the final shape rarely overshoots
        target = rng.uniform(lo, max(lo, hi - 0.12))
        for _ in range(64):
            name = names[int(rng.choice(len(names), p=probs))]
            _PAINTERS[name](holes, rng)
            if holes.mean() >= target:
                break
        if not spec.allow_border_contact:
            holes[0, :] = holes[-1, :] = False
            holes[:, 0] = holes[:, -1] = False
        cov = holes.mean()
        if lo <= cov <= hi:
            return Mask.from_bool(holes)
    raise DomainError(f"could not satisfy coverage {spec.coverage_range} after 1000 attempts")


def classify(mask: Mask) -> MaskClass:
    """A mask needs outpainting iff some hole pixel sits on the image border."""
    holes = mask.holes
    border = holes[0, :].any() or holes[-1, :].any() or holes[:, 0].any() or holes[:, -1].any()
    return MaskClass.CONTAINS_OUTPAINT if border else MaskClass.PURE_INPAINT
