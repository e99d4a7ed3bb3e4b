"""Complex-exponential map family behind the Droste effect.

A Droste-warped picture contains a copy of itself once per turn around its
center, zoomed by a period P.  The warp that produces it is

    T(z) = exp(alpha * Ln z),      alpha = (2*pi*i + ln P) / (2*pi*i)

so alpha = 1 - i * ln(P) / (2*pi).  All the raster code works in log
coordinates u = Ln z, where the one-turn periodicity becomes a plain
translation: exp(alpha * (u + 2*pi*i)) = P * exp(alpha * u).  The inverse
map is one-to-many; branch k differs from branch 0 by the factor
exp(2*pi*i*k / alpha).

Everything here is scalar double precision and pure; the warp engine
re-derives the same expressions vectorized and is tested against this
module point by point.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

from .errors import DomainError

TWO_PI = 2.0 * math.pi

__all__ = [
    "DrosteParams",
    "compute_alpha",
    "forward_map",
    "inverse_map",
    "log_with_cut",
    "self_similarity",
]


def _require_finite(value: complex, name: str) -> complex:
    value = complex(value)
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


def compute_alpha(period: float) -> complex:
    """Return alpha = (2*pi*i + ln period) / (2*pi*i) = 1 - i*ln(period)/(2*pi)."""
    if not (isinstance(period, (int, float)) and math.isfinite(period)):
        raise DomainError(f"period must be a finite real, got {period!r}")
    if period <= 1.0:
        raise DomainError(f"period must exceed 1, got {period!r}")
    return complex(1.0, -math.log(period) / TWO_PI)


def log_with_cut(z: complex, cut_angle: float = 0.0) -> complex:
    """Complex log with the branch cut along the ray at angle pi + cut_angle.

    cut_angle = 0 is the principal log (cut on the negative real axis);
    the argument lands in (cut_angle - pi, cut_angle + pi].
    """
    z = _require_finite(z, "z")
    if z == 0:
        raise DomainError("log of zero is undefined")
    if cut_angle == 0.0:
        phase = cmath.phase(z)
        if phase <= -math.pi:  # phase() maps -1-0j to -pi; fold onto the closed edge
            phase = math.pi
    else:
        phase = cmath.phase(z * cmath.exp(complex(0.0, -cut_angle)))
        if phase <= -math.pi:
            phase = math.pi
        phase += cut_angle
    return complex(math.log(abs(z)), phase)


@dataclass(frozen=True)
class DrosteParams:
    """Geometry of one Droste warp.

    period        scale factor per full turn (P > 1)
    center        warp center, source-image pixel coordinates (x + i*y, y down)
    base_radius   inner radius, in source pixels, of the annulus that unrolls
    branch_count  number of straight images N >= 1
    zoom_step     scale ratio s between consecutive straight images; derived
                  as period**(1/branch_count) when omitted, must satisfy
                  s**N == period to 1e-9 relative either way
    cut_angle     rotation of the branch cut away from the negative real axis
    alpha         derived map constant, cached
    """

    period: float = 256.0
    center: complex = 0j
    base_radius: float = 1.0
    branch_count: int = 8
    zoom_step: float | None = None
    cut_angle: float = 0.0
    alpha: complex = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        alpha = compute_alpha(self.period)
        if not (isinstance(self.branch_count, int) and self.branch_count >= 1):
            raise DomainError(f"branch_count must be an integer >= 1, got {self.branch_count!r}")
        if not (math.isfinite(self.base_radius) and self.base_radius > 0):
            raise DomainError(f"base_radius must be positive, got {self.base_radius!r}")
        _require_finite(self.center, "center")
        if not math.isfinite(self.cut_angle):
            raise DomainError(f"cut_angle must be finite, got {self.cut_angle!r}")
        if self.zoom_step is None:
            step = self.period ** (1.0 / self.branch_count)
            object.__setattr__(self, "zoom_step", step)
        else:
            step = float(self.zoom_step)
            if not (math.isfinite(step) and step > 0):
                raise DomainError(f"zoom_step must be positive, got {step!r}")
            if abs(step**self.branch_count - self.period) > 1e-9 * self.period:
                raise DomainError(
                    f"zoom_step**branch_count = {step**self.branch_count!r} "
                    f"does not reproduce period {self.period!r}"
                )
        object.__setattr__(self, "alpha", alpha)


def forward_map(u: complex, params: DrosteParams) -> complex:
    """Map a log-plane coordinate u = Ln z into the warped plane: exp(alpha*u).

    Satisfies the Droste identity exp(alpha*(u + 2*pi*i)) = P * exp(alpha*u).
    The result is in units of base_radius, relative to the warp center.
    """
    u = _require_finite(u, "u")
    return cmath.exp(params.alpha * u)


def inverse_map(z: complex, branch: int, params: DrosteParams) -> complex:
    """Branch k of the one-to-many inverse: exp((Ln z + 2*pi*i*k) / alpha).

    Consecutive branches of a fixed z are related by the constant factor
    exp(2*pi*i / alpha).
    """
    z = _require_finite(z, "z")
    if z == 0:
        raise DomainError("inverse_map of zero is undefined")
    if not (isinstance(branch, int) and 0 <= branch < params.branch_count):
        raise DomainError(
            f"branch must be an integer in [0, {params.branch_count}), got {branch!r}"
        )
    u = log_with_cut(z, params.cut_angle)
    return cmath.exp((u + complex(0.0, TWO_PI * branch)) / params.alpha)


def self_similarity(params: DrosteParams) -> tuple[float, float]:
    """Zoom factor and rotation (degrees) at which the warped image repeats in itself.

    The repeat factor is exp(2*pi*i/alpha), a shrink; reported here as the
    equivalent zoom-in: scale = 1/|exp(2*pi*i/alpha)| and the rotation angle
    normalized to [0, 360).  For P=256 that is about 22.58x and 157.63 deg.
    """
    g = cmath.exp(complex(0.0, -TWO_PI) / params.alpha)
    scale = abs(g)
    angle_deg = math.degrees(cmath.phase(g)) % 360.0
    return scale, angle_deg
