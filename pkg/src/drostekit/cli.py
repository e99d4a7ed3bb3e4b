"""Command line pipeline: unroll, mask, inpaint, rewarp, score, and report.

Subcommands
    unroll      unroll the source into N straight windows plus blank masks
    rewarp      warp a straight directory back into an annulus image
    mask-gen    write the seeded random mask set for each configured window
    inpaint     run one backend on one image + mask pair
    restore     fill every blank mask, rewarp, write restored + comparison
    experiment  every backend x every seeded mask, records CSV + report
    report      re-render the Markdown report from an existing records CSV
    selfcheck   recompute the derived constants and probe the metrics

Config file schema (JSON, all blocks optional unless a command needs them):

    {
      "source": "art.png",            path of the warped source image
      "out_dir": "out",               artifact directory (default "out")
      "seed": 7,                      global experiment seed, >= 0
      "droste": {
        "period": 256.0, "center": [x, y], "base_radius": 40.0,
        "branch_count": 8, "zoom_step": null, "cut_angle": 0.0
      },
      "sampler": {"interpolation": "bilinear", "supersampling": 2},
      "unroll": {
        "out_size": 512,              straight window edge, pixels
        "detect_blank": true,         also extract near-white blanks
        "whiteness_threshold": 250
      },
      "rewarp": {
        "out_size": null,             null: source-sized, pixel-aligned canvas
        "seam_band_px": 16.0, "inner_radius": 1.0
      },
      "mask": {
        "coverage_range": [0.15, 0.45],
        "shape_mix": null,            e.g. {"rectangle": 1, "ellipse": 1, "stroke": 1}
        "allow_border_contact": true
      },
      "backends": [
        {"kind": "diffusion", "name": "diffusion", "params": {}},
        {"kind": "patch", "name": "patch", "params": {"patch_size": 9}},
        {"kind": "external", "name": "mymodel",
         "command_template": "mytool --in {input} --mask {mask} --out {output}",
         "params": {"timeout": 600}}
      ],
      "metrics": ["brisque", "dom"],
      "experiment": {"images": null, "masks_per_image": 50}
    }

Seeds fan out deterministically: the mask for (window i, mask k) is seeded
from SeedSequence([seed, i, k]), so adding windows or masks never reshuffles
existing ones, and reruns with the same config and seed write byte-identical
records CSVs (wall times live in a sidecar file).

Exit codes: 0 success, 1 internal error, 2 configuration or input error,
3 backend failure.  Logs go to stderr; artifact paths print to stdout.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conformal import DrosteParams, compute_alpha, self_similarity
from .errors import BackendError, ConfigError, DomainError, DrosteKitError, UnsupportedInputError
from .inpaint import BackendDescriptor, run_backend
from .iqa import brisque_features, brisque_score, default_model_path, dom_score
from .masking import MaskSpec, classify, extract_blank, random_mask
from .raster import Mask, RasterImage
from .report import ExperimentRecord, ScoreReport, read_records_csv, render_report, write_records_csv, write_timings_csv
from .stats import f_critical
from .warp import SamplerSpec, StraightSet, load_straight_set, rewarp, save_straight_set, unroll

log = logging.getLogger("drostekit")

_METRIC_FUNCS = {"brisque": brisque_score, "dom": dom_score}

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3


# ---------------------------------------------------------------------------
# configuration

@dataclass
class PipelineConfig:
    """Validated run configuration; see the module docstring for the file schema."""

    source: Path | None
    out_dir: Path
    seed: int
    droste: DrosteParams
    sampler: SamplerSpec
    unroll_size: int
    detect_blank: bool
    whiteness_threshold: int
    rewarp_size: int | None
    seam_band_px: float
    inner_radius: float
    mask_coverage: tuple[float, float]
    mask_shape_mix: dict[str, float] | None
    mask_border: bool
    backends: list[BackendDescriptor]
    metrics: list[str]
    exp_images: list[int] | None
    masks_per_image: int


def _take(block: dict, allowed: dict, where: str) -> dict:
    """Merge a config block over defaults, rejecting unknown keys."""
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object, got {type(block).__name__}")
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(block)
    return merged


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing config file: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    top = _take(
        raw,
        {
            "source": None, "out_dir": "out", "seed": 0, "droste": {}, "sampler": {},
            "unroll": {}, "rewarp": {}, "mask": {}, "backends": [], "metrics": ["brisque", "dom"],
            "experiment": {},
        },
        "config",
    )

    seed = top["seed"]
    if not (isinstance(seed, int) and seed >= 0):
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")

    d = _take(
        top["droste"],
        {"period": 256.0, "center": [0.0, 0.0], "base_radius": 1.0,
         "branch_count": 8, "zoom_step": None, "cut_angle": 0.0},
        "droste",
    )
    center = d["center"]
    if not (isinstance(center, (list, tuple)) and len(center) == 2):
        raise ConfigError(f"droste.center must be [x, y], got {center!r}")
    droste = DrosteParams(
        period=float(d["period"]),
        center=complex(float(center[0]), float(center[1])),
        base_radius=float(d["base_radius"]),
        branch_count=int(d["branch_count"]),
        zoom_step=None if d["zoom_step"] is None else float(d["zoom_step"]),
        cut_angle=float(d["cut_angle"]),
    )

    s = _take(top["sampler"], {"interpolation": "bilinear", "supersampling": 2}, "sampler")
    sampler = SamplerSpec(interpolation=s["interpolation"], supersampling=int(s["supersampling"]))

    u = _take(top["unroll"], {"out_size": 512, "detect_blank": True, "whiteness_threshold": 250}, "unroll")
    r = _take(top["rewarp"], {"out_size": None, "seam_band_px": 16.0, "inner_radius": 1.0}, "rewarp")
    m = _take(
        top["mask"],
        {"coverage_range": [0.15, 0.45], "shape_mix": None, "allow_border_contact": True},
        "mask",
    )
    cov = m["coverage_range"]
    if not (isinstance(cov, (list, tuple)) and len(cov) == 2):
        raise ConfigError(f"mask.coverage_range must be [lo, hi], got {cov!r}")

    if not isinstance(top["backends"], list):
        raise ConfigError("backends must be a list")
    backends = []
    for i, bd in enumerate(top["backends"]):
        b = _take(bd, {"kind": None, "name": None, "command_template": None, "params": {}}, f"backends[{i}]")
        if b["kind"] is None or b["name"] is None:
            raise ConfigError(f"backends[{i}] needs kind and name")
        backends.append(
            BackendDescriptor(
                kind=b["kind"], name=b["name"],
                command_template=b["command_template"], params=dict(b["params"]),
            )
        )
    names = [b.name for b in backends]
    if len(set(names)) != len(names):
        raise ConfigError(f"backend names must be unique, got {names}")

    metrics = top["metrics"]
    if not isinstance(metrics, list) or not all(isinstance(x, str) for x in metrics):
        raise ConfigError(f"metrics must be a list of names, got {metrics!r}")
    unknown = [x for x in metrics if x not in _METRIC_FUNCS]
    if unknown:
        raise ConfigError(f"unknown metrics {unknown}, available: {sorted(_METRIC_FUNCS)}")

    e = _take(top["experiment"], {"images": None, "masks_per_image": 50}, "experiment")
    images = e["images"]
    if images is not None:
        if not (isinstance(images, list) and all(isinstance(x, int) for x in images) and images):
            raise ConfigError(f"experiment.images must be a nonempty list of window indices, got {images!r}")

    return PipelineConfig(
        source=None if top["source"] is None else Path(top["source"]),
        out_dir=Path(top["out_dir"]),
        seed=seed,
        droste=droste,
        sampler=sampler,
        unroll_size=int(u["out_size"]),
        detect_blank=bool(u["detect_blank"]),
        whiteness_threshold=int(u["whiteness_threshold"]),
        rewarp_size=None if r["out_size"] is None else int(r["out_size"]),
        seam_band_px=float(r["seam_band_px"]),
        inner_radius=float(r["inner_radius"]),
        mask_coverage=(float(cov[0]), float(cov[1])),
        mask_shape_mix=m["shape_mix"],
        mask_border=bool(m["allow_border_contact"]),
        backends=backends,
        metrics=list(metrics),
        exp_images=images,
        masks_per_image=int(e["masks_per_image"]),
    )


def derive_mask_seed(seed: int, image_index: int, mask_index: int) -> int:
    """Stable per-cell seed: independent streams that never reshuffle."""
    ss = np.random.SeedSequence([seed, image_index, mask_index])
    return int(ss.generate_state(1, np.uint64)[0])


def _mask_spec(cfg: PipelineConfig, seed: int) -> MaskSpec:
    kwargs = {"seed": seed, "coverage_range": cfg.mask_coverage, "allow_border_contact": cfg.mask_border}
    if cfg.mask_shape_mix is not None:
        kwargs["shape_mix"] = {k: float(v) for k, v in cfg.mask_shape_mix.items()}
    return MaskSpec(**kwargs)


def _load_source(cfg: PipelineConfig) -> RasterImage:
    if cfg.source is None:
        raise ConfigError("this command needs a source image; set \"source\" in the config")
    if not cfg.source.is_file():
        raise ConfigError(f"source image not found: {cfg.source}")
    return RasterImage.load(cfg.source)


def _select_backends(cfg: PipelineConfig, only: str | None) -> list[BackendDescriptor]:
    if not cfg.backends:
        raise ConfigError("this command needs at least one entry in \"backends\"")
    if only is None:
        return list(cfg.backends)
    chosen = [b for b in cfg.backends if b.name == only]
    if not chosen:
        raise ConfigError(f"no backend named {only!r}, configured: {[b.name for b in cfg.backends]}")
    return chosen


def _rewarp_geometry(cfg: PipelineConfig) -> tuple[int | tuple[int, int], tuple[float, float] | None]:
    """Output canvas for rewarp: explicit size, or a source-aligned canvas."""
    if cfg.rewarp_size is not None:
        return cfg.rewarp_size, None
    src = _load_source(cfg)
    center = (cfg.droste.center.real, cfg.droste.center.imag)
    return (src.height, src.width), center


# ---------------------------------------------------------------------------
# subcommands

def _unroll_with_detection(cfg: PipelineConfig, source: RasterImage) -> StraightSet:
    """Unroll and, when configured, widen the geometric blanks by the
    near-white regions actually present in the windows."""
    sset = unroll(source, cfg.droste, cfg.sampler, cfg.unroll_size)
    if not cfg.detect_blank:
        return sset
    merged = []
    for img, geo in zip(sset.images, sset.blank_masks):
        det = extract_blank(img, whiteness_threshold=cfg.whiteness_threshold)
        merged.append(Mask.from_bool(geo.holes | det.holes))
    return StraightSet(sset.images, merged, sset.params, sset.out_resolution,
                       sset.frame_scale, sset.sampler)


def cmd_unroll(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    source = _load_source(cfg)
    sset = _unroll_with_detection(cfg, source)
    out = cfg.out_dir / "straight"
    save_straight_set(sset, out)
    n = cfg.droste.branch_count
    manifest = {
        "source": str(cfg.source),
        "window_count": n,
        "out_size": cfg.unroll_size,
        "images": [f"straight_{k}.png" for k in range(n)],
        "blank_masks": [f"blank_{k}.png" for k in range(n)],
        "blank_pixels": [int(msk.holes.sum()) for msk in sset.blank_masks],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("unrolled %d windows of %s", n, cfg.source)
    print(out)
    return EXIT_OK


def cmd_rewarp(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    straight_dir = Path(args.straight_dir) if args.straight_dir else cfg.out_dir / "straight"
    if not straight_dir.is_dir():
        raise ConfigError(f"missing straight directory: {straight_dir}")
    sset = load_straight_set(straight_dir)
    out_size, center = _rewarp_geometry(cfg)
    image = rewarp(sset, cfg.sampler, out_size, seam_band_px=cfg.seam_band_px,
                   canvas_center=center, inner_radius=cfg.inner_radius)
    out = Path(args.out) if args.out else cfg.out_dir / "rewarped.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    image.save(out)
    print(out)
    return EXIT_OK


def cmd_mask_gen(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    count = args.count if args.count is not None else cfg.masks_per_image
    if count < 1:
        raise ConfigError(f"mask count must be >= 1, got {count}")
    indices = cfg.exp_images if cfg.exp_images is not None else list(range(cfg.droste.branch_count))
    out = cfg.out_dir / "masks"
    out.mkdir(parents=True, exist_ok=True)
    rows = ["image_index,mask_index,seed,coverage,mask_class"]
    for i in indices:
        for k in range(count):
            seed = derive_mask_seed(cfg.seed, i, k)
            mask = random_mask(_mask_spec(cfg, seed), cfg.unroll_size, cfg.unroll_size)
            mask.save(out / f"mask_i{i:02d}_m{k:03d}.png")
            rows.append(f"{i},{k},{seed},{mask.coverage():.6f},{classify(mask).value}")
    (out / "index.csv").write_text("\r\n".join(rows) + "\r\n")
    log.info("wrote %d masks for %d windows", count * len(indices), len(indices))
    print(out)
    return EXIT_OK


def cmd_inpaint(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    desc = _select_backends(cfg, args.backend)[0]
    image_path, mask_path = Path(args.image), Path(args.mask)
    if not image_path.is_file():
        raise ConfigError(f"missing image: {image_path}")
    if not mask_path.is_file():
        raise ConfigError(f"missing mask: {mask_path}")
    image = RasterImage.load(image_path)
    mask = Mask.load(mask_path)
    result = run_backend(desc, image, mask)
    out = Path(args.out) if args.out else cfg.out_dir / "inpainted.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    result.image.save(out)
    log.info("backend %s finished in %.2fs", result.backend, result.wall_time)
    print(out)
    return EXIT_OK


def _fill_stack(sset: StraightSet, desc: BackendDescriptor) -> StraightSet:
    """Inpaint every nonempty blank mask; the filled stack carries empty masks."""
    filled = []
    for k, (img, msk) in enumerate(zip(sset.images, sset.blank_masks)):
        if msk.holes.any():
            log.info("backend %s: window %d (%d blank px)", desc.name, k, int(msk.holes.sum()))
            filled.append(run_backend(desc, img, msk).image)
        else:
            filled.append(img.copy())
    empty = [Mask.from_bool(np.zeros((sset.images[0].height, sset.images[0].width), dtype=bool))
             for _ in filled]
    return StraightSet(filled, empty, sset.params, sset.out_resolution, sset.frame_scale, sset.sampler)


def _side_by_side(left: RasterImage, right: RasterImage) -> RasterImage:
    h = max(left.height, right.height)
    gap = 8
    canvas = np.zeros((h, left.width + gap + right.width, 4), dtype=np.uint8)
    canvas[: left.height, : left.width] = left.pixels
    canvas[: right.height, left.width + gap:] = right.pixels
    return RasterImage(canvas)


def cmd_restore(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    backends = _select_backends(cfg, args.backend)
    straight_dir = Path(args.straight_dir) if args.straight_dir else cfg.out_dir / "straight"
    if straight_dir.is_dir() and (straight_dir / "params.json").is_file():
        sset = load_straight_set(straight_dir)
    else:
        sset = _unroll_with_detection(cfg, _load_source(cfg))
    out_size, center = _rewarp_geometry(cfg)
    before = rewarp(sset, cfg.sampler, out_size, seam_band_px=cfg.seam_band_px,
                    canvas_center=center, inner_radius=cfg.inner_radius)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    for desc in backends:
        suffix = f"_{desc.name}" if len(backends) > 1 else ""
        try:
            filled = _fill_stack(sset, desc)
        except (BackendError, UnsupportedInputError) as exc:
            log.error("backend %s failed: %s", desc.name, exc)
            failures.append(desc.name)
            continue
        restored = rewarp(filled, cfg.sampler, out_size, seam_band_px=cfg.seam_band_px,
                          canvas_center=center, inner_radius=cfg.inner_radius)
        restored_path = cfg.out_dir / f"restored{suffix}.png"
        restored.save(restored_path)
        _side_by_side(before, restored).save(cfg.out_dir / f"comparison{suffix}.png")
        print(restored_path)
    if failures:
        raise BackendError(f"restore failed for backends: {failures}; partial artifacts kept in {cfg.out_dir}")
    return EXIT_OK


def _experiment_cells(cfg: PipelineConfig, sset: StraightSet, indices: list[int],
                      count: int, backends: list[BackendDescriptor]):
    """Pre-derive every (image, mask, backend) cell so workers share no RNG."""
    cells = []
    size = cfg.unroll_size
    for i in indices:
        for k in range(count):
            seed = derive_mask_seed(cfg.seed, i, k)
            mask = random_mask(_mask_spec(cfg, seed), size, size)
            mask_class = classify(mask).value
            for desc in backends:
                cells.append((i, k, seed, mask_class, sset.images[i], mask, desc))
    return cells


def _run_cell(cell, metrics: list[str]):
    i, k, seed, mask_class, image, mask, desc = cell
    start = time.perf_counter()
    try:
        result = run_backend(desc, image, mask)
        scores = {name: float(_METRIC_FUNCS[name](result.image)) for name in metrics}
        record = ExperimentRecord(i, k, seed, mask_class, desc.name, "ok", scores)
    except (BackendError, UnsupportedInputError) as exc:
        log.error("cell (image %d, mask %d, backend %s) failed: %s", i, k, desc.name, exc)
        record = ExperimentRecord(i, k, seed, mask_class, desc.name, "failed", {})
    return record, (i, k, desc.name, time.perf_counter() - start)


def cmd_experiment(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    backends = _select_backends(cfg, args.backend)
    if not cfg.metrics:
        raise ConfigError("experiment needs at least one metric")
    count = args.masks if args.masks is not None else cfg.masks_per_image
    if count < 1:
        raise ConfigError(f"masks per image must be >= 1, got {count}")

    source = _load_source(cfg)
    sset = unroll(source, cfg.droste, cfg.sampler, cfg.unroll_size)
    n = cfg.droste.branch_count
    indices = cfg.exp_images if cfg.exp_images is not None else list(range(n))
    bad = [i for i in indices if not 0 <= i < n]
    if bad:
        raise ConfigError(f"experiment.images out of range 0..{n - 1}: {bad}")

    cells = _experiment_cells(cfg, sset, indices, count, backends)
    log.info("experiment: %d cells (%d windows x %d masks x %d backends)",
             len(cells), len(indices), count, len(backends))
    workers = max(1, args.workers)
    if workers == 1:
        outcomes = [_run_cell(cell, cfg.metrics) for cell in cells]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda c: _run_cell(c, cfg.metrics), cells))
    records = [rec for rec, _ in outcomes]
    timings = [t for _, t in outcomes]

    if all(rec.status == "failed" for rec in records):
        raise BackendError(f"all {len(records)} experiment cells failed")

    out = cfg.out_dir / "experiment"
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(records, cfg.metrics, out / "records.csv")
    write_timings_csv(timings, out / "timings.csv")
    score_report = ScoreReport.from_records(records, cfg.metrics)
    (out / "report.md").write_text(render_report(score_report))
    failed = score_report.failed_cells
    if failed:
        log.warning("%d of %d cells failed and are missing from the statistics", failed, len(records))
    print(out / "records.csv")
    print(out / "report.md")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig | None, args: argparse.Namespace) -> int:
    csv_path = Path(args.csv) if args.csv else (cfg.out_dir if cfg else Path("out")) / "experiment" / "records.csv"
    records, metrics = read_records_csv(csv_path)
    text = render_report(ScoreReport.from_records(records, metrics))
    if args.out:
        Path(args.out).write_text(text)
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_selfcheck(args: argparse.Namespace) -> int:
    checks = []  # (name, "pass"/"fail"/"skip", detail)

    alpha = compute_alpha(256.0)
    expect = complex(1.0, -math.log(256.0) / (2.0 * math.pi))
    ok = abs(alpha - expect) <= 1e-9 and abs(alpha.imag + 0.8825424006106064) <= 1e-9
    checks.append(("alpha(period=256)", ok, f"{alpha.real:+.12f}{alpha.imag:+.12f}i"))

    scale, rotation = self_similarity(DrosteParams(period=256.0, center=0j, base_radius=1.0))
    ok = abs(scale - 22.58) <= 0.01 and abs(rotation - 157.63) <= 0.5
    checks.append(("self-similarity", ok, f"|scale| {scale:.4f}, rotation {rotation:.4f} deg"))

    fcrit = f_critical(2, 147, 0.95)
    ok = abs(fcrit - 3.06) <= 0.01
    checks.append(("f-critical(2,147)", ok, f"{fcrit:.9f}"))

    rng = np.random.default_rng(20260816)
    yy, xx = np.mgrid[0:96, 0:96]
    probe = 96.0 + 0.6 * xx + 0.4 * yy + 12.0 * rng.standard_normal((96, 96))
    probe_img = RasterImage.from_float(np.clip(probe, 0, 255).astype(np.float32))
    feats = brisque_features(probe_img)
    ok = feats.shape == (36,) and bool(np.isfinite(feats).all())
    checks.append(("brisque-features probe", ok, f"{feats.shape[0]} finite features"))

    status = []
    if default_model_path().is_file():
        try:
            score = brisque_score(probe_img)
            checks.append(("brisque-score probe", bool(np.isfinite(score)), f"score {score:.4f}"))
        except DrosteKitError as exc:
            checks.append(("brisque-score probe", False, str(exc)))
    else:
        status.append(("brisque-score probe", "skip", "missing model file (not a failure)"))

    failed = 0
    for name, ok, detail in checks:
        line = "pass" if ok else "fail"
        failed += 0 if ok else 1
        print(f"{line}  {name}: {detail}")
    for name, line, detail in status:
        print(f"{line}  {name}: {detail}")
    print(f"selfcheck: {len(checks) - failed} passed, {failed} failed, {len(status)} skipped")
    return EXIT_OK if failed == 0 else EXIT_INTERNAL


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drostekit",
        description="Unroll, inpaint, rewarp, and score Droste-warped artwork.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, config: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True, help="JSON config file")
            p.add_argument("--out-dir", default=None, help="override out_dir")
            p.add_argument("--seed", type=int, default=None, help="override the global seed")
        return p

    add("unroll", "unroll the source into straight windows plus blank masks")

    p = add("rewarp", "rewarp a straight directory into an annulus image")
    p.add_argument("--straight-dir", default=None, help="straight set directory (default OUT/straight)")
    p.add_argument("--out", default=None, help="output image path")

    p = add("mask-gen", "write the seeded random mask set")
    p.add_argument("--count", type=int, default=None, help="masks per window (default from config)")

    p = add("inpaint", "run one backend on one image + mask")
    p.add_argument("--image", required=True, help="input image path")
    p.add_argument("--mask", required=True, help="mask path (white = hole)")
    p.add_argument("--backend", default=None, help="backend name (default: first configured)")
    p.add_argument("--out", default=None, help="output image path")

    p = add("restore", "fill every blank mask, rewarp, write restored + comparison")
    p.add_argument("--straight-dir", default=None, help="reuse an unrolled directory")
    p.add_argument("--backend", default=None, help="restrict to one backend name")

    p = add("experiment", "run every backend on every seeded mask and score the results")
    p.add_argument("--backend", default=None, help="restrict to one backend name")
    p.add_argument("--masks", type=int, default=None, help="masks per window (default from config)")
    p.add_argument("--workers", type=int, default=1, help="parallel cells (default 1)")

    p = sub.add_parser("report", help="re-render the Markdown report from a records CSV")
    p.add_argument("--config", default=None, help="JSON config file (for the default CSV location)")
    p.add_argument("--csv", default=None, help="records CSV (default OUT/experiment/records.csv)")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")

    sub.add_parser("selfcheck", help="recompute derived constants and probe the metrics")
    return parser


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "out_dir", None) is not None:
        cfg.out_dir = Path(args.out_dir)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {args.seed}")
        cfg.seed = args.seed
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "selfcheck":
            return cmd_selfcheck(args)
        if args.command == "report":
            cfg = load_config(args.config) if args.config else None
            return cmd_report(cfg, args)
        cfg = _apply_overrides(load_config(args.config), args)
        handler = {
            "unroll": cmd_unroll,
            "rewarp": cmd_rewarp,
            "mask-gen": cmd_mask_gen,
            "inpaint": cmd_inpaint,
            "restore": cmd_restore,
            "experiment": cmd_experiment,
        }[args.command]
        return handler(cfg, args)
    except BackendError as exc:
        log.error("%s", exc)
        return EXIT_BACKEND
    except (ConfigError, DomainError, UnsupportedInputError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DrosteKitError as exc:
        log.error("%s", exc)
        return EXIT_INTERNAL
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
