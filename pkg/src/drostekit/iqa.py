"""No-reference image quality: natural-scene-statistics features scored by a
support vector regression (lower is better), and an edge-sharpness score
from second differences at detected edges (higher is better).

The 36-feature layout, per scale (full resolution, then a 2x2 box-average
half resolution):
  [0]  GGD shape of the normalized luminance field
  [1]  GGD variance of the normalized luminance field
  [2..5]   AGGD (shape, mean offset, left variance, right variance) of the
           horizontal neighbor product
  [6..9]   same for the vertical product
  [10..13] same for the main-diagonal product
  [14..17] same for the secondary-diagonal product
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DomainError, UnsupportedInputError
from .raster import RasterImage

__all__ = [
    "SvrModel",
    "brisque_features",
    "brisque_score",
    "default_model_path",
    "dom_score",
    "fit_aggd",
    "fit_ggd",
    "mscn",
]

_GAUSS_SIGMA = 7.0 / 6.0
_GAUSS_TRUNCATE = 18.0 / 7.0  # radius 3, so the window is exactly 7x7

_SHAPE_GRID = np.arange(0.2, 10.0 + 1e-9, 1e-3)
_ggd_ratio_cache: np.ndarray | None = None
_aggd_ratio_cache: np.ndarray | None = None


def _lgamma(v: np.ndarray) -> np.ndarray:
    return np.vectorize(math.lgamma, otypes=[np.float64])(v)


def _gray64(image: RasterImage) -> np.ndarray:
    # metric-grade luma: float64 end to end so affine identities survive
    rgb = image.pixels[:, :, :3].astype(np.float64)
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def _ggd_ratio_table() -> np.ndarray:
    # r(shape) = gamma(1/a) gamma(3/a) / gamma(2/a)^2, monotone in shape
    global _ggd_ratio_cache
    if _ggd_ratio_cache is None:
        a = _SHAPE_GRID
        _ggd_ratio_cache = np.exp(_lgamma(1.0 / a) + _lgamma(3.0 / a) - 2.0 * _lgamma(2.0 / a))
    return _ggd_ratio_cache


def _aggd_ratio_table() -> np.ndarray:
    global _aggd_ratio_cache
    if _aggd_ratio_cache is None:
        _aggd_ratio_cache = 1.0 / _ggd_ratio_table()
    return _aggd_ratio_cache


def _mscn_of_gray(gray: np.ndarray) -> np.ndarray:
    h, w = gray.shape
    if h < 7 or w < 7:
        raise DomainError(f"image must be at least 7x7 for local normalization, got {w}x{h}")
    gray = gray.astype(np.float64)
    mu = ndimage.gaussian_filter(gray, _GAUSS_SIGMA, truncate=_GAUSS_TRUNCATE, mode="reflect")
    second = ndimage.gaussian_filter(gray * gray, _GAUSS_SIGMA, truncate=_GAUSS_TRUNCATE, mode="reflect")
    sigma = np.sqrt(np.clip(second - mu * mu, 0.0, None))
    return (gray - mu) / (sigma + 1.0)


def mscn(image: RasterImage) -> np.ndarray:
    """Locally normalized luminance: (I - mu) / (sigma + 1) with mu, sigma
    from a 7x7 Gaussian window (sigma 7/6), borders mirrored including the
    edge sample.  Input is converted to 0..255 luma internally."""
    return _mscn_of_gray(_gray64(image))


def _check_samples(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 100:
        raise DomainError(f"need at least 100 samples, got {x.size}")
    if not np.isfinite(x).all():
        raise DomainError("samples must be finite")
    if x.max() == x.min():
        raise DomainError("degenerate samples: all values equal")
    return x


def fit_ggd(samples) -> tuple[float, float]:
    """Moment-matched generalized Gaussian fit: returns (shape, sigma).

    The shape solves gamma(1/a) gamma(3/a) / gamma(2/a)^2 = E[x^2] / E|x|^2
    by nearest lookup over the grid [0.2, 10] step 1e-3."""
    x = _check_samples(samples)
    m2 = float(np.mean(x * x))
    mabs = float(np.mean(np.abs(x)))
    if mabs == 0.0:
        raise DomainError("degenerate samples: zero absolute moment")
    ratio = m2 / (mabs * mabs)
    shape = float(_SHAPE_GRID[int(np.argmin(np.abs(_ggd_ratio_table() - ratio)))])
    return shape, math.sqrt(m2)


def fit_aggd(samples) -> tuple[float, float, float, float]:
    """Moment-matched asymmetric generalized Gaussian fit.

    Returns (shape, sigma_left, sigma_right, mean_offset); the offset is
    (sigma_right - sigma_left) gamma(2/a)/gamma(1/a) sqrt(gamma(1/a)/gamma(3/a)).
    """
    x = _check_samples(samples)
    left = x[x < 0.0]
    right = x[x > 0.0]
    sigma_l = math.sqrt(float(np.mean(left * left))) if left.size else 0.0
    sigma_r = math.sqrt(float(np.mean(right * right))) if right.size else 0.0
    if sigma_l == 0.0 and sigma_r == 0.0:
        raise DomainError("degenerate samples: no spread on either side")
    gamma_hat = sigma_l / sigma_r if sigma_r > 0.0 else np.inf
    m2 = float(np.mean(x * x))
    mabs = float(np.mean(np.abs(x)))
    r_hat = (mabs * mabs) / m2
    if math.isinf(gamma_hat):
        r_norm = r_hat
    else:
        r_norm = r_hat * (gamma_hat**3 + 1.0) * (gamma_hat + 1.0) / (gamma_hat**2 + 1.0) ** 2
    shape = float(_SHAPE_GRID[int(np.argmin(np.abs(_aggd_ratio_table() - r_norm)))])
    g1 = math.lgamma(1.0 / shape)
    g2 = math.lgamma(2.0 / shape)
    g3 = math.lgamma(3.0 / shape)
    mean_offset = (sigma_r - sigma_l) * math.exp(g2 - g1) * math.sqrt(math.exp(g1 - g3))
    return shape, sigma_l, sigma_r, mean_offset


def _half_resolution(gray: np.ndarray) -> np.ndarray:
    h2, w2 = gray.shape[0] // 2, gray.shape[1] // 2
    blocks = gray[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2)
    return blocks.mean(axis=(1, 3))


def brisque_features(image: RasterImage) -> np.ndarray:
    """The 36-dimensional natural-scene-statistics vector (see module doc
    for the exact layout).  Needs at least 14x14 pixels so the half-scale
    pass still has a 7x7 window."""
    gray = _gray64(image)
    if min(gray.shape) < 14:
        raise DomainError("image must be at least 14x14 for the two-scale features")
    feats: list[float] = []
    for scale in range(2):
        if scale == 1:
            gray = _half_resolution(gray)
        m = _mscn_of_gray(gray)
        shape, sigma = fit_ggd(m)
        feats.extend([shape, sigma * sigma])
        products = (
            m[:, :-1] * m[:, 1:],
            m[:-1, :] * m[1:, :],
            m[:-1, :-1] * m[1:, 1:],
            m[:-1, 1:] * m[1:, :-1],
        )
        for prod in products:
            a, sl, sr, eta = fit_aggd(prod)
            feats.extend([a, eta, sl * sl, sr * sr])
    out = np.asarray(feats, dtype=np.float64)
    if not np.isfinite(out).all():
        raise DomainError("non-finite feature encountered")
    return out


# ---------------------------------------------------------------------------
# SVR scoring

@dataclass(frozen=True)
class SvrModel:
    """RBF support vector regression over the 36 features.

    Text format, line oriented: `gamma <g>`, `rho <r>`, `n_sv <n>`, then
    `scale <i> <min> <max>` for each of the 36 features, then one line per
    support vector: dual coefficient followed by the 36 feature values.
    """

    gamma: float
    rho: float
    coefficients: np.ndarray
    support_vectors: np.ndarray
    scale_min: np.ndarray
    scale_max: np.ndarray

    def __post_init__(self) -> None:
        if self.support_vectors.ndim != 2 or self.support_vectors.shape[1] != 36:
            raise ConfigError("support vectors must be n x 36")
        if self.coefficients.shape != (self.support_vectors.shape[0],):
            raise ConfigError("one dual coefficient per support vector required")
        if self.scale_min.shape != (36,) or self.scale_max.shape != (36,):
            raise ConfigError("scaling ranges must cover all 36 features")
        if not (self.scale_min < self.scale_max).all():
            raise ConfigError("each scaling range needs min < max")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")

    @classmethod
    def load(cls, path: str | Path) -> "SvrModel":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"missing model file: {path}")
        lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]

        def take(prefix: str, line: str) -> list[str]:
            parts = line.split()
            if parts[0] != prefix:
                raise ConfigError(f"model file: expected {prefix!r} line, got {line[:40]!r}")
            return parts[1:]

        try:
            gamma = float(take("gamma", lines[0])[0])
            rho = float(take("rho", lines[1])[0])
            n_sv = int(take("n_sv", lines[2])[0])
            smin = np.zeros(36)
            smax = np.zeros(36)
            for i in range(36):
                idx, lo, hi = take("scale", lines[3 + i])
                if int(idx) != i:
                    raise ConfigError(f"model file: scale lines out of order at {idx}")
                smin[i], smax[i] = float(lo), float(hi)
            rows = lines[39 : 39 + n_sv]
            if len(rows) != n_sv:
                raise ConfigError(f"model file: expected {n_sv} support vectors, found {len(rows)}")
            data = np.array([[float(v) for v in row.split()] for row in rows], dtype=np.float64)
            if data.shape[1] != 37:
                raise ConfigError("model file: each support vector row needs 1 + 36 values")
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"model file malformed: {exc}") from exc
        return cls(gamma, rho, data[:, 0].copy(), data[:, 1:].copy(), smin, smax)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write(f"gamma {float(self.gamma)!r}\n")
            f.write(f"rho {float(self.rho)!r}\n")
            f.write(f"n_sv {self.support_vectors.shape[0]}\n")
            for i in range(36):
                f.write(f"scale {i} {float(self.scale_min[i])!r} {float(self.scale_max[i])!r}\n")
            for coef, sv in zip(self.coefficients, self.support_vectors):
                f.write(" ".join([repr(float(coef))] + [repr(float(v)) for v in sv]) + "\n")

    def scale(self, features: np.ndarray) -> np.ndarray:
        return -1.0 + 2.0 * (features - self.scale_min) / (self.scale_max - self.scale_min)

    def score(self, features: np.ndarray) -> float:
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (36,):
            raise DomainError("expected a 36-feature vector")
        x = self.scale(features)
        d2 = ((self.support_vectors - x) ** 2).sum(axis=1)
        return float(self.coefficients @ np.exp(-self.gamma * d2) - self.rho)


def default_model_path() -> Path:
    return Path(__file__).parent / "data" / "brisque_svr.txt"


_default_model: SvrModel | None = None


def brisque_score(image: RasterImage, model: SvrModel | None = None) -> float:
    """Natural-scene-statistics quality score; lower is better.  Uses the
    packaged model when none is supplied."""
    global _default_model
    if model is None:
        if _default_model is None:
            _default_model = SvrModel.load(default_model_path())
        model = _default_model
    return model.score(brisque_features(image))


# ---------------------------------------------------------------------------
# edge sharpness

def _otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Otsu's threshold over values normalized to their max (scale free)."""
    vmax = float(values.max())
    if vmax <= 0.0:
        return 0.0
    u = values / vmax
    hist, edges = np.histogram(u, bins=bins, range=(0.0, 1.0))
    total = u.size
    p = hist.astype(np.float64) / total
    omega = np.cumsum(p)
    mu = np.cumsum(p * (np.arange(bins) + 0.5) / bins)
    mu_t = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return edges[k + 1] * vmax


def dom_score(image: RasterImage) -> float:
    """Sharpness at detected edges: the ratio of lag-2 second differences to
    first differences, accumulated over both axes at edge pixels (gradient
    magnitude above an Otsu threshold).  Higher is sharper; invariant under
    positive affine intensity changes.
    """
    gray = _gray64(image)
    if min(gray.shape) < 16:
        raise DomainError("image must be at least 16x16 for the sharpness score")
    med = ndimage.median_filter(gray, size=3, mode="reflect")
    gy, gx = np.gradient(med)
    gmag = np.hypot(gx, gy)
    thresh = _otsu_threshold(gmag)
    edge = gmag > thresh
    edge[:2, :] = edge[-2:, :] = False
    edge[:, :2] = edge[:, -2:] = False
    if not edge.any():
        raise UnsupportedInputError("no edge pixels detected, image is unscorable")
    ys, xs = np.nonzero(edge)
    second = np.abs(med[ys, xs + 2] - 2.0 * med[ys, xs] + med[ys, xs - 2]) + np.abs(
        med[ys + 2, xs] - 2.0 * med[ys, xs] + med[ys - 2, xs]
    )
    first = np.abs(med[ys, xs + 1] - med[ys, xs - 1]) + np.abs(med[ys + 1, xs] - med[ys - 1, xs])
    den = float(first.sum())
    if den == 0.0:
        raise UnsupportedInputError("edge pixels carry no first-order variation")
    return float(second.sum()) / den
