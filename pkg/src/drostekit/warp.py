"""Raster application of the Droste maps: unroll into straight zoom windows, rewarp back.

Planes and units: straight plane z', log plane u = Ln z', warped plane
w = exp(alpha * u).  w is dimensionless (units of base_radius) relative to
the warp center; all complex coordinates are x + i*y with y down.  The
source annulus |w| in [1, period] unrolls into N square straight windows
with half-widths frame_scale * zoom_step**k, so window k+1 shows the same
scene zoomed out by one zoom_step.  The central blank disk |w| < 1 pulls
back to a logarithmic spiral band that crosses every window; the blank
masks mark it.

Rewarping picks, per output pixel, the straight window whose sampling
density is closest to 1:1 in the source (the continuous window index
depends only on the log-plane angle residue), and linearly blends across
a seam band of configurable output-pixel width.  The blend only ever
mixes windows k and k+1 evaluated at the same straight-plane point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conformal import TWO_PI, DrosteParams
from .errors import ConfigError, DomainError
from .raster import Mask, RasterImage, psnr

_PAD = 2  # alpha-0 ring around sources, wide enough for the bicubic footprint

__all__ = [
    "SamplerSpec",
    "StraightSet",
    "load_straight_set",
    "resample",
    "rewarp",
    "roundtrip_psnr",
    "save_straight_set",
    "unroll",
]


@dataclass(frozen=True)
class SamplerSpec:
    """How to pull pixels through a map: interpolation kernel and supersampling."""

    interpolation: str = "bilinear"
    supersampling: int = 1

    def __post_init__(self) -> None:
        if self.interpolation not in ("nearest", "bilinear", "bicubic"):
            raise DomainError(f"unknown interpolation {self.interpolation!r}")
        if not (isinstance(self.supersampling, int) and 1 <= self.supersampling <= 8):
            raise DomainError(f"supersampling must be an integer in [1, 8], got {self.supersampling!r}")


# ---------------------------------------------------------------------------
# low-level samplers

def _pad_planes(planes: np.ndarray) -> np.ndarray:
    h, w = planes.shape[:2]
    out = np.zeros((h + 2 * _PAD, w + 2 * _PAD, planes.shape[2]), dtype=np.float32)
    out[_PAD : _PAD + h, _PAD : _PAD + w] = planes
    return out


def _sample_planes(
    padded: np.ndarray, alpha_col: int, xs: np.ndarray, ys: np.ndarray, interpolation: str
) -> tuple[np.ndarray, np.ndarray]:
    """Sample padded (Hp, Wp, C) float32 planes at unpadded float coords.

    Returns (values (N, C) float32, valid (N,) bool).  A sample is valid only
    if every source pixel it actually weights has alpha 255 in the plane at
    alpha_col; the pad ring has alpha 0, so out-of-bounds samples are invalid.
    """
    hp, wp = padded.shape[:2]
    x = np.asarray(xs, dtype=np.float64).ravel() + _PAD
    y = np.asarray(ys, dtype=np.float64).ravel() + _PAD
    inb = (x >= 0) & (x <= wp - 1) & (y >= 0) & (y <= hp - 1)
    x = np.where(inb, x, 0.0)
    y = np.where(inb, y, 0.0)
    opaque = padded[:, :, alpha_col] == 255.0

    if interpolation == "nearest":
        xi = np.clip(np.floor(x + 0.5).astype(np.int64), 0, wp - 1)
        yi = np.clip(np.floor(y + 0.5).astype(np.int64), 0, hp - 1)
        vals = padded[yi, xi]
        valid = inb & opaque[yi, xi]
        return vals, valid

    if interpolation == "bilinear":
        x0 = np.clip(np.floor(x).astype(np.int64), 0, wp - 2)
        y0 = np.clip(np.floor(y).astype(np.int64), 0, hp - 2)
        fx = (x - x0).astype(np.float32)
        fy = (y - y0).astype(np.float32)
        vals = np.zeros((x.size, padded.shape[2]), dtype=np.float32)
        valid = inb.copy()
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            for dx, wx in ((0, 1.0 - fx), (1, fx)):
                wgt = wx * wy
                vals += wgt[:, None] * padded[y0 + dy, x0 + dx]
                valid &= opaque[y0 + dy, x0 + dx] | (wgt <= 0.0)
        return vals, valid

    # bicubic: separable Catmull-Rom over a 4x4 footprint
    x0 = np.clip(np.floor(x).astype(np.int64), 1, wp - 3)
    y0 = np.clip(np.floor(y).astype(np.int64), 1, hp - 3)
    fx = (x - x0).astype(np.float32)
    fy = (y - y0).astype(np.float32)

    def cubic_weights(t: np.ndarray) -> list[np.ndarray]:
        t2 = t * t
        t3 = t2 * t
        return [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ]

    wxs = cubic_weights(fx)
    wys = cubic_weights(fy)
    vals = np.zeros((x.size, padded.shape[2]), dtype=np.float32)
    valid = inb.copy()
    for dy in range(4):
        for dx in range(4):
            wgt = wxs[dx] * wys[dy]
            vals += wgt[:, None] * padded[y0 + dy - 1, x0 + dx - 1]
            valid &= opaque[y0 + dy - 1, x0 + dx - 1] | (wgt == 0.0)
    return vals, valid


def _subsample_offsets(ss: int) -> list[tuple[float, float]]:
    steps = [(i + 0.5) / ss - 0.5 for i in range(ss)]
    return [(ox, oy) for oy in steps for ox in steps]


def resample(source: RasterImage, map_fn, out_shape: tuple[int, int], sampler: SamplerSpec) -> RasterImage:
    """Destination-driven resampling engine.

    map_fn(xs, ys) takes output pixel-center coordinates and returns source
    coordinates; None is the identity map (engine test hook).  Output pixels
    whose footprint touches missing data (alpha 0 or out of bounds) in any
    subsample come out with alpha 0.
    """
    h, w = out_shape
    padded = _pad_planes(source.rgba_f32())
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    acc = np.zeros((h * w, 3), dtype=np.float32)
    valid = np.ones(h * w, dtype=bool)
    for ox, oy in _subsample_offsets(sampler.supersampling):
        gx = xs + ox
        gy = ys + oy
        if map_fn is None:
            sx, sy = gx, gy
        else:
            sx, sy = map_fn(gx, gy)
        vals, ok = _sample_planes(padded, 3, sx, sy, sampler.interpolation)
        acc += vals[:, :3]
        valid &= ok
    acc /= sampler.supersampling**2
    return RasterImage.from_float(acc.reshape(h, w, 3), valid.reshape(h, w))


# ---------------------------------------------------------------------------
# straight sets

@dataclass
class StraightSet:
    """The N straight zoom windows of one unrolled source, plus their blank masks."""

    images: list[RasterImage]
    blank_masks: list[Mask]
    params: DrosteParams
    out_resolution: float
    frame_scale: float = 1.0
    sampler: SamplerSpec = field(default_factory=SamplerSpec)

    def __post_init__(self) -> None:
        n = self.params.branch_count
        if len(self.images) != n or len(self.blank_masks) != n:
            raise DomainError(
                f"StraightSet needs {n} images and masks, got {len(self.images)}/{len(self.blank_masks)}"
            )
        if n == 0:
            raise DomainError("empty StraightSet")
        h, w = self.images[0].height, self.images[0].width
        for img, msk in zip(self.images, self.blank_masks):
            if (img.height, img.width) != (h, w):
                raise DomainError("straight images must share dimensions")
            if (msk.height, msk.width) != (h, w):
                raise DomainError("blank masks must match image dimensions")

    @property
    def out_size(self) -> int:
        return self.images[0].width


# canonical key names for the persisted params file (consumed by the CLI)
_PARAMS_KEYS = (
    "period",
    "center",
    "base_radius",
    "branch_count",
    "zoom_step",
    "cut_angle",
    "frame_scale",
    "out_size",
    "out_resolution",
    "interpolation",
    "supersampling",
)


def save_straight_set(sset: StraightSet, directory: str | Path) -> None:
    """Persist as straight_<k>.png / blank_<k>.png plus a params JSON file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, (img, msk) in enumerate(zip(sset.images, sset.blank_masks)):
        img.save(directory / f"straight_{k}.png")
        msk.save(directory / f"blank_{k}.png")
    doc = {
        "period": sset.params.period,
        "center": [sset.params.center.real, sset.params.center.imag],
        "base_radius": sset.params.base_radius,
        "branch_count": sset.params.branch_count,
        "zoom_step": sset.params.zoom_step,
        "cut_angle": sset.params.cut_angle,
        "frame_scale": sset.frame_scale,
        "out_size": sset.out_size,
        "out_resolution": sset.out_resolution,
        "interpolation": sset.sampler.interpolation,
        "supersampling": sset.sampler.supersampling,
    }
    with open(directory / "params.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_straight_set(directory: str | Path) -> StraightSet:
    directory = Path(directory)
    params_path = directory / "params.json"
    if not params_path.is_file():
        raise ConfigError(f"missing params file: {params_path}")
    with open(params_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    missing = [k for k in _PARAMS_KEYS if k not in doc]
    if missing:
        raise ConfigError(f"params file lacks keys: {', '.join(missing)}")
    params = DrosteParams(
        period=float(doc["period"]),
        center=complex(float(doc["center"][0]), float(doc["center"][1])),
        base_radius=float(doc["base_radius"]),
        branch_count=int(doc["branch_count"]),
        zoom_step=float(doc["zoom_step"]),
        cut_angle=float(doc["cut_angle"]),
    )
    sampler = SamplerSpec(str(doc["interpolation"]), int(doc["supersampling"]))
    images, masks = [], []
    for k in range(params.branch_count):
        ipath = directory / f"straight_{k}.png"
        mpath = directory / f"blank_{k}.png"
        if not ipath.is_file() or not mpath.is_file():
            raise ConfigError(f"straight set at {directory} is incomplete (branch {k})")
        images.append(RasterImage.load(ipath))
        masks.append(Mask.load(mpath))
    return StraightSet(
        images=images,
        blank_masks=masks,
        params=params,
        out_resolution=float(doc["out_resolution"]),
        frame_scale=float(doc["frame_scale"]),
        sampler=sampler,
    )


# ---------------------------------------------------------------------------
# geometry helpers shared by unroll and rewarp

def _cut_angle_of(x: np.ndarray, y: np.ndarray, cut_angle: float) -> np.ndarray:
    """Vectorized argument in (cut_angle - pi, cut_angle + pi]."""
    if cut_angle == 0.0:
        ang = np.arctan2(y, x)
        np.copyto(ang, math.pi, where=ang <= -math.pi)
        return ang
    ca, sa = math.cos(-cut_angle), math.sin(-cut_angle)
    ang = np.arctan2(sa * x + ca * y, ca * x - sa * y)
    np.copyto(ang, math.pi, where=ang <= -math.pi)
    return ang + cut_angle


def _ln_p_over_two_pi(params: DrosteParams) -> float:
    return math.log(params.period) / TWO_PI


def _frame_scale_for(source: RasterImage, params: DrosteParams) -> float:
    """Smallest window scale >= 1 whose largest window frames every preimage of the source data."""
    c = _ln_p_over_two_pi(params)
    cx, cy = params.center.real, params.center.imag
    corners = [(0.0, 0.0), (source.width - 1.0, 0.0), (0.0, source.height - 1.0), (source.width - 1.0, source.height - 1.0)]
    extent = max(math.hypot(px - cx, py - cy) for px, py in corners) / params.base_radius
    q_max = math.pi / (1.0 + c * c)
    needed = extent * params.zoom_step * math.exp(c * q_max) / params.period
    return max(1.0, needed)


# ---------------------------------------------------------------------------
# unroll

def unroll(source: RasterImage, params: DrosteParams, sampler: SamplerSpec, out_size: int) -> StraightSet:
    """Unroll a Droste-warped source into params.branch_count straight windows.

    Each output pixel maps output coordinate -> log plane -> warped source
    plane and interpolates the source there.  Pixels whose preimage lies
    inside the central unit disk |w| < 1 are flagged in the blank masks;
    pixels whose footprint leaves the source data get alpha 0.
    """
    if out_size < 64:
        raise ConfigError(f"out_size must be at least 64, got {out_size}")
    cx, cy = params.center.real, params.center.imag
    if not (0 <= cx <= source.width - 1 and 0 <= cy <= source.height - 1):
        raise ConfigError(f"center {params.center} outside source bounds {source.width}x{source.height}")
    if params.base_radius < 1.0:
        raise ConfigError("base_radius covers less than one source pixel")

    alpha = params.alpha
    c = _ln_p_over_two_pi(params)
    frame_scale = _frame_scale_for(source, params)
    padded = _pad_planes(source.rgba_f32())
    half = (out_size - 1) / 2.0
    ys, xs = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    offsets = _subsample_offsets(sampler.supersampling)

    images: list[RasterImage] = []
    masks: list[Mask] = []
    for k in range(params.branch_count):
        delta = 2.0 * frame_scale * params.zoom_step**k / out_size
        acc = np.zeros((out_size * out_size, 3), dtype=np.float32)
        valid = np.ones(out_size * out_size, dtype=bool)
        blank = np.zeros(out_size * out_size, dtype=bool)
        for ox, oy in offsets:
            zx = (xs + ox - half) * delta
            zy = (ys + oy - half) * delta
            r2 = zx * zx + zy * zy
            p = 0.5 * np.log(np.maximum(r2, 1e-300))
            q = _cut_angle_of(zx, zy, params.cut_angle)
            # w = exp(alpha * (p + i q)); alpha = 1 - i c
            wr = np.exp(p + c * q)
            wang = q - c * p
            sx = cx + params.base_radius * wr * np.cos(wang)
            sy = cy + params.base_radius * wr * np.sin(wang)
            vals, ok = _sample_planes(padded, 3, sx, sy, sampler.interpolation)
            acc += vals[:, :3]
            valid &= ok
            blank |= (p + c * q < 0.0).ravel()
        acc /= len(offsets)
        images.append(RasterImage.from_float(acc.reshape(out_size, out_size, 3), valid.reshape(out_size, out_size)))
        masks.append(Mask.from_bool(blank.reshape(out_size, out_size)))

    return StraightSet(
        images=images,
        blank_masks=masks,
        params=params,
        out_resolution=out_size / 2.0,
        frame_scale=frame_scale,
        sampler=sampler,
    )


# ---------------------------------------------------------------------------
# rewarp

@dataclass
class RewarpAux:
    """Diagnostics per output pixel: chosen window, blend weight, blank footprint."""

    primary: np.ndarray  # int16, -1 outside the annulus / uncovered
    partner: np.ndarray  # int16, -1 where unblended
    blend: np.ndarray  # float32 weight of the partner window
    touched_blank: np.ndarray  # bool, sample footprint overlapped a blank mask


def rewarp(
    straight: StraightSet,
    sampler: SamplerSpec,
    out_size: int | tuple[int, int],
    seam_band_px: float = 16.0,
    canvas_center: tuple[float, float] | None = None,
    inner_radius: float = 1.0,
    with_aux: bool = False,
):
    """Warp a straight stack back into the annulus between base_radius and base_radius*period.

    The canvas is out_size square (or (height, width)), at source pixel
    scale, with w = 0 at canvas_center (default: canvas middle).  Lowering
    inner_radius below 1 renders into the central disk as well, which is
    how an inpainted stack completes the picture.  Returns a RasterImage,
    or (RasterImage, RewarpAux) when with_aux is set.
    """
    params = straight.params
    n = params.branch_count
    if isinstance(out_size, tuple):
        h, w = out_size
    else:
        h = w = int(out_size)
    if h < 1 or w < 1:
        raise DomainError("rewarp canvas must be at least 1x1")
    if not (0.0 <= inner_radius < params.period):
        raise DomainError(f"inner_radius must be in [0, period), got {inner_radius}")
    if canvas_center is None:
        canvas_center = ((w - 1) / 2.0, (h - 1) / 2.0)

    alpha = params.alpha
    c = _ln_p_over_two_pi(params)
    one_c2 = 1.0 + c * c
    ln_s = math.log(params.zoom_step)
    s_out = straight.out_size
    ln_p = math.log(params.period)
    # source pixels per straight pixel, at window 0, as a log offset
    ln_cal = math.log(2.0 * straight.frame_scale * params.base_radius * abs(alpha) / s_out)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    wx = (xs - canvas_center[0]) / params.base_radius
    wy = (ys - canvas_center[1]) / params.base_radius
    r = np.hypot(wx, wy)
    annulus = (r >= inner_radius) & (r <= params.period)

    a = np.log(np.maximum(r, 1e-300))
    b = _cut_angle_of(wx, wy, params.cut_angle)
    t = c * a + b
    m = np.rint((one_c2 * params.cut_angle - t) / TWO_PI)
    q = (t + TWO_PI * m) / one_c2
    p = a - c * q
    zx = np.exp(p) * np.cos(q)
    zy = np.exp(p) * np.sin(q)

    # continuous window index: ln ratio(k) = ln_cal + k*ln_s + c*q = 0
    kappa = -(ln_cal + c * q) / ln_s
    z_inf = np.maximum(np.abs(zx), np.abs(zy))
    # smallest window that frames the point, with half a pixel of slack
    frame_limit = straight.frame_scale * (1.0 - 1.0 / s_out)
    k_frame = np.ceil(np.log(np.maximum(z_inf, 1e-300) / frame_limit) / ln_s - 1e-12)
    k_frame = np.maximum(k_frame, 0.0)
    covered = annulus & (k_frame <= n - 1)

    # seam blend: weight of window floor(kappa)+1, ramped over seam_band_px
    k_lo = np.floor(kappa)
    frac = kappa - k_lo
    if seam_band_px > 0.0:
        r_px = np.maximum(r * params.base_radius, 1e-9)
        half_band = 0.5 * seam_band_px * c / (math.sqrt(one_c2) * ln_s * r_px)
        blend = np.clip((frac - 0.5) / (2.0 * half_band) + 0.5, 0.0, 1.0)
    else:
        blend = (frac > 0.5).astype(np.float64)
    k1 = np.clip(k_lo, k_frame, n - 1).astype(np.int32)
    k2 = np.clip(k_lo + 1.0, k_frame, n - 1).astype(np.int32)
    same = k1 == k2
    blend = np.where(same, 0.0, blend).astype(np.float32)

    flat_k1 = k1.ravel()
    flat_k2 = k2.ravel()
    flat_cov = covered.ravel()
    npix = h * w
    s1 = np.zeros((npix, 3), dtype=np.float32)
    s2 = np.zeros((npix, 3), dtype=np.float32)
    v1 = np.zeros(npix, dtype=bool)
    v2 = np.zeros(npix, dtype=bool)
    blank1 = np.zeros(npix, dtype=np.float32)
    blank2 = np.zeros(npix, dtype=np.float32)

    half_s = (s_out - 1) / 2.0
    zx_f = zx.ravel()
    zy_f = zy.ravel()
    for k in range(n):
        delta_k = 2.0 * straight.frame_scale * params.zoom_step**k / s_out
        planes = None
        for which, flat_k, sv, vv, bv in (("p", flat_k1, s1, v1, blank1), ("s", flat_k2, s2, v2, blank2)):
            sel = flat_cov & (flat_k == k)
            if which == "s":
                sel &= ~same.ravel()
            if not sel.any():
                continue
            if planes is None:
                planes = _pad_planes(
                    np.concatenate(
                        [
                            straight.images[k].rgba_f32(),
                            straight.blank_masks[k].pixels[:, :, None].astype(np.float32),
                        ],
                        axis=2,
                    )
                )
            px = zx_f[sel] / delta_k + half_s
            py = zy_f[sel] / delta_k + half_s
            vals, ok = _sample_planes(planes, 3, px, py, sampler.interpolation)
            sv[sel] = vals[:, :3]
            vv[sel] = ok
            bv[sel] = vals[:, 4]

    tb = blend.ravel()
    both = v1 & v2
    rgb = np.zeros((npix, 3), dtype=np.float32)
    rgb[both] = (1.0 - tb[both, None]) * s1[both] + tb[both, None] * s2[both]
    only1 = v1 & ~v2
    only2 = v2 & ~v1
    rgb[only1] = s1[only1]
    rgb[only2] = s2[only2]
    valid = (v1 | v2) & flat_cov
    out = RasterImage.from_float(rgb.reshape(h, w, 3), valid.reshape(h, w))
    if not with_aux:
        return out

    primary = np.where(covered, np.where(blend > 0.5, k2, k1), -1).astype(np.int16)
    partner_used = covered & ~same & (blend > 0.0) & (blend < 1.0) & both.reshape(h, w)
    partner = np.where(partner_used, np.where(blend > 0.5, k1, k2), -1).astype(np.int16)
    w1 = np.where(both, 1.0 - tb, np.where(only1, 1.0, 0.0))
    w2 = np.where(both, tb, np.where(only2, 1.0, 0.0))
    touched = ((w1 > 0.0) & (blank1 > 1e-4)) | ((w2 > 0.0) & (blank2 > 1e-4))
    aux = RewarpAux(
        primary=primary,
        partner=partner,
        blend=blend.astype(np.float32),
        touched_blank=touched.reshape(h, w),
    )
    return out, aux


def roundtrip_psnr(
    source: RasterImage,
    params: DrosteParams,
    sampler: SamplerSpec,
    out_size: int | None = None,
    seam_band_px: float = 16.0,
) -> float:
    """Unroll then rewarp, and report PSNR over pixels valid in both.

    The rewarp canvas matches the source raster exactly (same dimensions,
    w = 0 at params.center), so the comparison is pixel-aligned.
    """
    if out_size is None:
        out_size = int(min(2048, max(512, max(source.width, source.height))))
    sset = unroll(source, params, sampler, out_size)
    back = rewarp(
        sset,
        sampler,
        (source.height, source.width),
        seam_band_px=seam_band_px,
        canvas_center=(params.center.real, params.center.imag),
    )
    return psnr(source, back)
