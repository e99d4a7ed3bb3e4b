"""Hole filling: harmonic diffusion, exemplar patch copy, external backends.

The two built-in fills are classical baselines so the whole pipeline runs
without any learned model: diffusion carries smooth context into the hole,
patch copy repeats surrounding texture.  External backends run as child
processes over a file protocol (in.png / mask.png / out.png in a work
directory), which keeps arbitrary models pluggable without linking them.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BackendError, ConfigError, DomainError, UnsupportedInputError
from .raster import Mask, RasterImage

__all__ = [
    "BackendDescriptor",
    "InpaintResult",
    "diffusion_fill",
    "patch_fill",
    "run_backend",
    "run_external",
]

_KINDS = ("diffusion", "patch", "external")


@dataclass(frozen=True)
class BackendDescriptor:
    """One inpainting backend: a built-in fill or an external command."""

    kind: str
    name: str
    command_template: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"backend kind must be one of {_KINDS}, got {self.kind!r}")
        if not self.name or not self.name.replace("-", "_").isidentifier():
            raise ConfigError(f"backend name must be an identifier, got {self.name!r}")
        if self.kind == "external":
            for ph in ("{input}", "{mask}", "{output}"):
                if self.command_template.count(ph) != 1:
                    raise ConfigError(f"external command template needs {ph} exactly once")
        elif self.command_template:
            raise ConfigError("command_template is only valid for external backends")


@dataclass
class InpaintResult:
    image: RasterImage
    backend: str
    wall_time: float
    unmasked_preserved: bool


# ---------------------------------------------------------------------------
# harmonic diffusion

def _check_holes_have_boundary(known: np.ndarray, holes: np.ndarray) -> None:
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labels, count = ndimage.label(holes, structure=four)
    if count == 0:
        return
    next_to_known = ndimage.binary_dilation(known, structure=four) & holes
    fed = np.unique(labels[next_to_known])
    missing = set(range(1, count + 1)) - set(int(v) for v in fed)
    if missing:
        raise UnsupportedInputError(
            f"{len(missing)} hole component(s) have no known boundary pixel to diffuse from"
        )


def _sor_passes(
    u: np.ndarray,
    free: np.ndarray,
    nb_idx: np.ndarray,
    nb_ok: np.ndarray,
    parity: np.ndarray,
    omega: float,
    tol: float,
    max_iter: int,
) -> None:
    """Red-black successive over-relaxation on the flattened channel planes.

    u: (H*W, 3) float64, updated in place at the free indices.  float32
    would stall: its resolution near 128 is about 1.5e-5, so tight
    tolerances become unreachable.
    nb_idx/nb_ok: (n_free, 4) neighbor flat indices and usability flags.
    """
    counts = nb_ok.sum(axis=1).astype(np.float64)[:, None]
    groups = [np.nonzero(parity == 0)[0], np.nonzero(parity == 1)[0]]
    for _ in range(max_iter):
        worst = 0.0
        for g in groups:
            idx = free[g]
            acc = np.zeros((g.size, 3), dtype=np.float64)
            for j in range(4):
                ok = nb_ok[g, j]
                acc[ok] += u[nb_idx[g, j][ok]]
            target = acc / counts[g]
            delta = omega * (target - u[idx])
            u[idx] += delta
            worst = max(worst, float(np.abs(delta).max(initial=0.0)))
        if worst < tol:
            break


def _neighbor_tables(shape, free_yx, usable):
    h, w = shape
    ys, xs = free_yx
    offs = ((-1, 0), (1, 0), (0, -1), (0, 1))
    nb_idx = np.zeros((ys.size, 4), dtype=np.int64)
    nb_ok = np.zeros((ys.size, 4), dtype=bool)
    for j, (dy, dx) in enumerate(offs):
        ny = ys + dy
        nx = xs + dx
        inb = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        nyc = np.clip(ny, 0, h - 1)
        nxc = np.clip(nx, 0, w - 1)
        nb_idx[:, j] = nyc * w + nxc
        nb_ok[:, j] = inb & usable[nyc, nxc]
    return nb_idx, nb_ok


def _solve_harmonic(rgb: np.ndarray, known: np.ndarray, holes: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Fill holes with the discrete harmonic extension of the known pixels."""
    h, w = holes.shape
    usable = known | holes
    u = rgb.astype(np.float64)
    boundary = ndimage.binary_dilation(holes, np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)) & known
    seed = rgb[boundary].mean(axis=0) if boundary.any() else np.full(3, 128.0)

    # coarse-to-fine: solve a 2x downsampling first and lift it as the start
    if min(h, w) >= 64 and np.count_nonzero(holes) > 512:
        h2, w2 = h // 2, w // 2
        blk = rgb[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2, 3)
        known_blk = known[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2)
        holes_blk = holes[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2)
        holes_c = holes_blk.any(axis=(1, 3))
        known_c = known_blk.all(axis=(1, 3)) & ~holes_c
        with np.errstate(invalid="ignore"):
            kw = known_blk[..., None].astype(np.float64)
            rgb_c = (blk * kw).sum(axis=(1, 3)) / np.maximum(kw.sum(axis=(1, 3)), 1e-6)
        rgb_c[~(known_c | holes_c)] = seed
        try:
            _check_holes_have_boundary(known_c, holes_c)
            coarse = _solve_harmonic(rgb_c, known_c, holes_c, max(tol, 0.05), 400)
            up = np.repeat(np.repeat(coarse, 2, axis=0), 2, axis=1)
            up = up[:h, :w]
            if up.shape[0] < h:
                up = np.concatenate([up, up[-1:, :]], axis=0)
            if up.shape[1] < w:
                up = np.concatenate([up, up[:, -1:]], axis=1)
            u[holes] = up[holes]
        except UnsupportedInputError:
            u[holes] = seed
    else:
        u[holes] = seed

    ys, xs = np.nonzero(holes)
    nb_idx, nb_ok = _neighbor_tables((h, w), (ys, xs), usable)
    free = ys * w + xs
    parity = ((ys + xs) & 1).astype(np.int8)
    span = max(int(ys.max() - ys.min()), int(xs.max() - xs.min())) + 2 if ys.size else 2
    omega = min(1.95, 2.0 / (1.0 + math.sin(math.pi / span)))
    flat = u.reshape(-1, 3)
    _sor_passes(flat, free, nb_idx, nb_ok, parity, omega, tol, max_iter)
    return flat.reshape(h, w, 3)


def diffusion_fill(image: RasterImage, mask: Mask, tol: float = 1e-3, max_iter: int = 20000) -> InpaintResult:
    """Fill hole pixels with the harmonic (discrete Laplace) extension of the
    surrounding known pixels, via red-black SOR with a coarse-grid start.

    Known means opaque and unmasked; fully transparent pixels outside the
    mask are left untouched and excluded from the stencil.  Iteration stops
    when the largest per-pixel update drops below tol (0..255 scale) or
    after max_iter sweeps.
    """
    if image.pixels.shape[:2] != mask.pixels.shape:
        raise DomainError("image and mask dimensions differ")
    holes = mask.holes
    if not holes.any():
        raise DomainError("mask is empty, nothing to fill")
    if tol <= 0 or max_iter < 1:
        raise DomainError("tol must be > 0 and max_iter >= 1")
    known = (image.alpha == 255) & ~holes
    _check_holes_have_boundary(known, holes)

    start = time.perf_counter()
    solved = _solve_harmonic(image.rgb_f32(), known, holes, float(tol), int(max_iter))
    out = image.copy()
    out.pixels[:, :, :3][holes] = np.clip(np.rint(solved[holes]), 0, 255).astype(np.uint8)
    out.pixels[:, :, 3][holes] = 255
    return InpaintResult(out, "diffusion", time.perf_counter() - start, True)


# ---------------------------------------------------------------------------
# exemplar patch copy

def _candidate_centers(known: np.ndarray, patch: int, cap: int):
    """Fully known patch centers: the complete boolean field plus a coarse
    subset capped at cap for the bulk SSD pass.  Returns (full, ys, xs, stride)
    where stride is how far apart the coarse subset samples sit."""
    full = ndimage.minimum_filter(known.astype(np.uint8), size=patch, mode="constant", cval=0) == 1
    ys, xs = np.nonzero(full)
    if ys.size == 0:
        raise UnsupportedInputError("no fully known source patch exists")
    stride = 1
    if ys.size > cap:
        stride = int(math.ceil(math.sqrt(ys.size / cap)))
        keep = ((ys % stride) == 0) & ((xs % stride) == 0)
        if np.count_nonzero(keep) >= 64:
            ys, xs = ys[keep], xs[keep]
        if ys.size > cap:
            step = int(math.ceil(ys.size / cap))
            ys, xs = ys[::step], xs[::step]
            stride += step
    return full, ys, xs, stride


def patch_fill(image: RasterImage, mask: Mask, patch_size: int = 9) -> InpaintResult:
    """Exemplar fill: peel the hole inward, copying for each target patch the
    best source patch (SSD over the target's currently known pixels).

    Source patches are fixed up front to fully known regions of the input,
    so no comparison ever reads hole data from the source side.  The search
    runs over a coarse candidate grid (capped for speed) and then refines
    around the coarse winner over every fully known center nearby, so
    periodic textures keep their phase.  Ties at either stage pick the
    lowest (y, x) center examined.  Deterministic.
    """
    if patch_size < 3 or patch_size % 2 == 0:
        raise DomainError(f"patch_size must be odd and >= 3, got {patch_size}")
    if image.pixels.shape[:2] != mask.pixels.shape:
        raise DomainError("image and mask dimensions differ")
    holes = mask.holes.copy()
    if not holes.any():
        raise DomainError("mask is empty, nothing to fill")
    h, w = holes.shape
    half = patch_size // 2
    if min(h, w) < patch_size:
        raise UnsupportedInputError("image smaller than one patch")

    start = time.perf_counter()
    known0 = (image.alpha == 255) & ~holes
    full_ok, cy, cx, stride = _candidate_centers(known0, patch_size, cap=2048)
    rgb = image.rgb_f32()
    # patch views indexed by top-left corner: center (y, x) <-> [y-half, x-half]
    swv_src = np.lib.stride_tricks.sliding_window_view(rgb, (patch_size, patch_size), axis=(0, 1))
    cand_flat = np.ascontiguousarray(
        swv_src[cy - half, cx - half].transpose(0, 2, 3, 1).reshape(cy.size, -1)
    )
    cand_sq = cand_flat**2
    refine_r = stride + 1 if stride > 1 else 0

    work = rgb.copy()
    known = known0.copy()
    eight = np.ones((3, 3), dtype=bool)
    guard = 0
    while holes.any():
        guard += 1
        if guard > 10000:
            raise UnsupportedInputError("patch fill failed to make progress")
        ring = holes & ndimage.binary_dilation(known, structure=eight)
        if not ring.any():
            raise UnsupportedInputError("hole region is not reachable from known pixels")
        ty, tx = np.nonzero(ring)
        ty = np.clip(ty, half, h - half - 1)
        tx = np.clip(tx, half, w - half - 1)
        order = np.unique(ty * w + tx)
        ty, tx = order // w, order % w
        # thin the layer: patch writes cover patch_size/2 around each center
        if ty.size > 1:
            keep = np.zeros(ty.size, dtype=bool)
            taken = np.zeros((h, w), dtype=bool)
            for i in range(ty.size):
                if not taken[ty[i], tx[i]]:
                    keep[i] = True
                    y0, y1 = max(0, ty[i] - half), min(h, ty[i] + half + 1)
                    x0, x1 = max(0, tx[i] - half), min(w, tx[i] + half + 1)
                    taken[y0:y1, x0:x1] = True
            ty, tx = ty[keep], tx[keep]

        # snapshot target patches and their known-pixel weights for this layer
        swv_work = np.lib.stride_tricks.sliding_window_view(work, (patch_size, patch_size), axis=(0, 1))
        swv_known = np.lib.stride_tricks.sliding_window_view(known, (patch_size, patch_size))
        tgt = swv_work[ty - half, tx - half]  # (T, 3, p, p)
        wgt = swv_known[ty - half, tx - half].astype(np.float32)  # (T, p, p)
        t_flat = tgt.transpose(0, 2, 3, 1).reshape(ty.size, -1)
        w3 = np.repeat(wgt[:, :, :, None], 3, axis=3).reshape(ty.size, -1)
        # SSD over known pixels only: sum w*(s-t)^2 = w.s^2 - 2(w.t).s + w.t^2
        ssd = w3 @ cand_sq.T - 2.0 * (w3 * t_flat) @ cand_flat.T
        best = np.argmin(ssd, axis=1)  # first minimum = lowest (y, x) candidate

        for i, (yy, xx) in enumerate(zip(ty, tx)):
            by, bx = int(cy[best[i]]), int(cx[best[i]])
            if refine_r:
                # exhaustive pass near the coarse winner keeps texture phase
                ry0 = max(half, by - refine_r)
                ry1 = min(h - half - 1, by + refine_r)
                rx0 = max(half, bx - refine_r)
                rx1 = min(w - half - 1, bx + refine_r)
                sy, sx = np.nonzero(full_ok[ry0 : ry1 + 1, rx0 : rx1 + 1])
                if sy.size > 1:
                    pats = swv_src[ry0 + sy - half, rx0 + sx - half]  # (n, 3, p, p)
                    d = pats - tgt[i][None]
                    sd = (d * d * wgt[i][None, None]).sum(axis=(1, 2, 3))
                    j = int(np.argmin(sd))
                    by, bx = ry0 + int(sy[j]), rx0 + int(sx[j])
            src = rgb[by - half : by + half + 1, bx - half : bx + half + 1]
            sl_y = slice(yy - half, yy + half + 1)
            sl_x = slice(xx - half, xx + half + 1)
            fill_here = holes[sl_y, sl_x]
            work[sl_y, sl_x][fill_here] = src[fill_here]
            known[sl_y, sl_x][fill_here] = True
            holes[sl_y, sl_x][fill_here] = False

    out = image.copy()
    filled = mask.holes
    out.pixels[:, :, :3][filled] = np.clip(np.rint(work[filled]), 0, 255).astype(np.uint8)
    out.pixels[:, :, 3][filled] = 255
    return InpaintResult(out, "patch", time.perf_counter() - start, True)


# ---------------------------------------------------------------------------
# external process protocol

def run_external(
    desc: BackendDescriptor,
    image: RasterImage,
    mask: Mask,
    timeout: float = 600.0,
    workdir: str | Path | None = None,
    restore_unmasked: bool = True,
) -> InpaintResult:
    """Run an external inpainting command over the file protocol.

    Writes in.png and mask.png into the work directory, substitutes the
    {input} {mask} {output} placeholders, runs the command with stderr
    captured to backend.log, reads out.png back, and (by default) restores
    every unmasked pixel from the input so flaky backends cannot disturb
    known data.
    """
    if desc.kind != "external":
        raise ConfigError(f"run_external needs an external descriptor, got kind {desc.kind!r}")
    if image.pixels.shape[:2] != mask.pixels.shape:
        raise DomainError("image and mask dimensions differ")
    if workdir is None:
        workdir = Path(tempfile.mkdtemp(prefix=f"{desc.name}_"))
    else:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
    in_path = workdir / "in.png"
    mask_path = workdir / "mask.png"
    out_path = workdir / "out.png"
    log_path = workdir / "backend.log"
    image.save(in_path)
    mask.save(mask_path)

    command = (
        desc.command_template.replace("{input}", str(in_path))
        .replace("{mask}", str(mask_path))
        .replace("{output}", str(out_path))
    )
    args = shlex.split(command)
    start = time.perf_counter()
    try:
        with open(log_path, "wb") as logf:
            proc = subprocess.run(args, stdout=subprocess.DEVNULL, stderr=logf, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise BackendError(f"backend {desc.name} timed out after {timeout:.0f}s (log: {log_path})") from exc
    except OSError as exc:
        raise BackendError(f"backend {desc.name} failed to launch: {exc}") from exc
    elapsed = time.perf_counter() - start
    if proc.returncode != 0:
        tail = log_path.read_text(errors="replace")[-2000:] if log_path.exists() else ""
        raise BackendError(f"backend {desc.name} exited with {proc.returncode}; stderr tail:\n{tail}")
    if not out_path.is_file():
        raise BackendError(f"backend {desc.name} produced no output at {out_path}")
    try:
        out = RasterImage.load(out_path)
    except Exception as exc:
        raise BackendError(f"backend {desc.name} output unreadable: {exc}") from exc
    if out.pixels.shape[:2] != image.pixels.shape[:2]:
        raise BackendError(
            f"backend {desc.name} output is {out.pixels.shape[1]}x{out.pixels.shape[0]}, "
            f"expected {image.width}x{image.height}"
        )
    if restore_unmasked:
        keep = ~mask.holes
        out.pixels[keep] = image.pixels[keep]
        preserved = True
    else:
        preserved = bool(np.array_equal(out.pixels[~mask.holes], image.pixels[~mask.holes]))
    return InpaintResult(out, desc.name, elapsed, preserved)


def run_backend(
    desc: BackendDescriptor,
    image: RasterImage,
    mask: Mask,
    timeout: float = 600.0,
    workdir: str | Path | None = None,
) -> InpaintResult:
    """Dispatch to the built-in fills or the external protocol, applying
    descriptor params (tol, max_iter, patch_size, restore_unmasked)."""
    p = desc.params
    if desc.kind == "diffusion":
        res = diffusion_fill(image, mask, float(p.get("tol", 1e-3)), int(p.get("max_iter", 20000)))
    elif desc.kind == "patch":
        res = patch_fill(image, mask, int(p.get("patch_size", 9)))
    else:
        res = run_external(
            desc,
            image,
            mask,
            timeout=float(p.get("timeout", timeout)),
            workdir=workdir,
            restore_unmasked=bool(p.get("restore_unmasked", True)),
        )
    res.backend = desc.name
    return res
