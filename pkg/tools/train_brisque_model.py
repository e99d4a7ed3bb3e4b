"""Train the packaged quality model (src/drostekit/data/brisque_svr.txt).

The published reference SVR for this feature set is not redistributable
here, so the package ships a substitute with the same file format and
score polarity: an RBF kernel ridge regression fit on seeded synthetic
scenes under graded distortions, labeled by distortion severity (0 =
pristine, 100 = strongest).  Lower score = better quality, matching the
convention the reports assume.  Deterministic: re-running this script
reproduces the asset bit for bit on the same platform.

Run from the repository root:  python3 tools/train_brisque_model.py
"""

import sys
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from drostekit.iqa import SvrModel, brisque_features  # noqa: E402
from drostekit.raster import RasterImage  # noqa: E402

GAMMA = 0.05
RIDGE = 1e-2
OUT = Path(__file__).resolve().parent.parent / "src" / "drostekit" / "data" / "brisque_svr.txt"

NOISE_SIGMAS = (0.0, 3.0, 6.0, 10.0, 15.0, 21.0, 28.0)
BLUR_SIGMAS = (0.6, 1.2, 2.0, 3.2)


def scene(seed: int, size: int = 128) -> RasterImage:
    """Synthetic photograph: octave noise to the pixel scale, hard-edged
    blobs, and an illumination gradient.  Distinct construction from the
    test fixtures so held-out checks measure generalization."""
    rng = np.random.default_rng(seed)
    field = np.zeros((size, size))
    for scale, amp in ((0.6, 0.8), (1.2, 1.1), (2.5, 2.0), (5.0, 4.0), (10.0, 8.0), (20.0, 15.0)):
        field += amp * gaussian_filter(rng.standard_normal((size, size)), scale, mode="reflect")
    field /= max(field.std(), 1e-9)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    blobs = np.zeros_like(field)
    for _ in range(6):
        cy, cx = rng.uniform(0.1 * size, 0.9 * size, size=2)
        r = rng.uniform(0.05 * size, 0.25 * size)
        blobs += rng.uniform(-1.4, 1.4) * (np.hypot(yy - cy, xx - cx) < r)
    tilt = rng.uniform(-0.7, 0.7) * (yy / size - 0.5) + rng.uniform(-0.7, 0.7) * (xx / size - 0.5)
    luma = 126.0 + 44.0 * field + 46.0 * blobs + 55.0 * tilt
    rgb = np.stack([luma, luma, luma], axis=2) + rng.normal(0.0, 2.0, size=(size, size, 3))
    return RasterImage.from_float(np.clip(rgb, 2.0, 253.0))


def distort(img: RasterImage, kind: str, level: float, seed: int) -> RasterImage:
    rgb = img.rgb_f32().astype(np.float64)
    if kind == "noise":
        rng = np.random.default_rng(seed)
        rgb = rgb + rng.normal(0.0, level, size=rgb.shape)
    elif kind == "blur":
        rgb = gaussian_filter(rgb, (level, level, 0), mode="reflect")
    return RasterImage.from_float(np.clip(rgb, 0.0, 255.0))


def main() -> None:
    feats = []
    labels = []
    for base_seed in range(24):
        img = scene(1000 + base_seed)
        for sigma in NOISE_SIGMAS:
            d = distort(img, "noise", sigma, seed=7000 + base_seed) if sigma else img
            feats.append(brisque_features(d))
            labels.append(100.0 * sigma / max(NOISE_SIGMAS))
        for sigma in BLUR_SIGMAS:
            d = distort(img, "blur", sigma, seed=0)
            feats.append(brisque_features(d))
            labels.append(100.0 * sigma / max(BLUR_SIGMAS))
    x = np.asarray(feats)
    y = np.asarray(labels)

    smin = x.min(axis=0)
    smax = x.max(axis=0)
    pad = np.maximum(1e-6, 0.05 * (smax - smin))
    smin, smax = smin - pad, smax + pad
    xs = -1.0 + 2.0 * (x - smin) / (smax - smin)

    d2 = ((xs[:, None, :] - xs[None, :, :]) ** 2).sum(axis=2)
    k = np.exp(-GAMMA * d2)
    coefs = np.linalg.solve(k + RIDGE * np.eye(len(y)), y)

    model = SvrModel(
        gamma=GAMMA,
        rho=0.0,
        coefficients=coefs,
        support_vectors=xs,
        scale_min=smin,
        scale_max=smax,
    )
    OUT.parent.mkdir(parents=True, exist_ok=True)
    model.save(OUT)
    print(f"wrote {OUT} with {len(y)} support vectors")

    # held-out sanity: pristine vs noisy must strictly increase
    wins = 0
    for seed in range(40, 50):
        img = scene(seed)
        noisy = distort(img, "noise", 10.0, seed=seed)
        s0 = model.score(brisque_features(img))
        s1 = model.score(brisque_features(noisy))
        wins += int(s1 > s0)
        print(f"  held-out seed {seed}: pristine {s0:8.3f} noisy {s1:8.3f} {'ok' if s1 > s0 else 'FAIL'}")
    print(f"monotonicity: {wins}/10")
    if wins < 10:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
