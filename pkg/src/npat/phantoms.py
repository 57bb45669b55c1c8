"""Smooth compactly supported initial sources V0 = (v0, v1)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, SupportViolation, VelocityNotZero
from .geometry import Geometry
from .operators import StatePair

log = logging.getLogger(__name__)

SUPPORT_MARGIN_NODES = 4


class PhantomKind(Enum):
    BUMP = "bump"
    MULTIBUMP = "multibump"
    ANNULUS = "annulus"


@dataclass(frozen=True)
class PhantomSpec:
    kind: PhantomKind
    centers: Tuple[Tuple[float, float], ...]
    radii: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    widths: Tuple[float, ...] = ()     # annulus half-thickness; unused otherwise
    velocity_part: bool = False

    def __post_init__(self):
        n = len(self.centers)
        if n == 0:
            raise ConfigError("phantom needs at least one center")
        if self.kind is PhantomKind.BUMP and n != 1:
            raise ConfigError(f"kind=bump takes exactly one center, got {n}")
        if len(self.radii) != n or len(self.amplitudes) != n:
            raise ConfigError("phantom centers, radii and amplitudes differ in length")
        if self.kind is PhantomKind.ANNULUS and len(self.widths) != n:
            raise ConfigError("annulus phantom needs one width per center")
        if any(r <= 0 for r in self.radii) or any(w <= 0 for w in self.widths):
            raise ConfigError("phantom radii and widths must be positive")

    def outer_radii(self) -> Tuple[float, ...]:
        if self.kind is PhantomKind.ANNULUS:
            return tuple(r + w for r, w in zip(self.radii, self.widths))
        return self.radii


def bump_profile(r: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - r^2)) for r < 1, else 0; equals 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


def _check_support(spec: PhantomSpec, geometry: Geometry) -> None:
    grid = geometry.grid
    x0, x1, y0, y1 = grid.extent
    need = SUPPORT_MARGIN_NODES * grid.h
    for (cx, cy), R in zip(spec.centers, spec.outer_radii()):
        clearance = min(cx - R - x0, x1 - cx - R, cy - R - y0, y1 - cy - R)
        if clearance < need - 1e-12:
            raise SupportViolation(
                f"support disc at ({cx:g}, {cy:g}) radius {R:g} is {clearance:.4g} from the "
                f"boundary, needs {need:.4g}")


def make_phantom(spec: PhantomSpec, geometry: Geometry) -> StatePair:
    _check_support(spec, geometry)
    X, Y = geometry.grid.coords()
    v0 = np.zeros(geometry.grid.shape)
    v1 = np.zeros(geometry.grid.shape)
    widths = spec.widths or (None,) * len(spec.centers)
    for (cx, cy), R, amp, w in zip(spec.centers, spec.radii, spec.amplitudes, widths):
        rho = np.hypot(X - cx, Y - cy)
        if spec.kind is PhantomKind.ANNULUS:
            shape = bump_profile(np.abs(rho - R) / w)
            scale = w
        else:
            shape = bump_profile(rho / R)
            scale = R
        v0 += amp * shape
        if spec.velocity_part:
            v1 += amp * geometry.speed.c / scale * shape
    log.debug("phantom %s: %d component(s), peak %.4g", spec.kind.value, len(spec.centers),
              np.abs(v0).max())
    return StatePair(v0, v1, geometry)


def pat_even_data(V0: StatePair) -> bool:
    """PAT sources start at rest, so the solution is even in t and I- data is the reflection of I+."""
    if V0.u1.any():
        raise VelocityNotZero("PAT-mode data needs v1 = 0; the phantom carries a velocity part")
    return True


def default_phantom_spec(arm_length: float = 1.0) -> PhantomSpec:
    """Two bumps inside the corner's visible wedge."""
    a = arm_length
    return PhantomSpec(
        PhantomKind.MULTIBUMP,
        centers=((0.27 * a, 0.42 * a), (0.45 * a, 0.27 * a)),
        radii=(0.15 * a, 0.15 * a),
        amplitudes=(1.0, -0.6),
    )


def random_bump_spec(rng: np.random.Generator, arm_length: float = 1.0, n_bumps: int = 2,
                     velocity_part: bool = False, box: Optional[Tuple[float, float]] = None) -> PhantomSpec:
    """Bumps of radius 0.1-0.15 arm lengths with centres drawn from `box` (default the wedge core)."""
    lo, hi = box if box is not None else (0.3 * arm_length, 0.5 * arm_length)
    centers = tuple((float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))) for _ in range(n_bumps))
    radii = tuple(float(r) for r in rng.uniform(0.1, 0.15, n_bumps) * arm_length)
    amps = tuple(float(a) for a in rng.uniform(-1.0, 1.0, n_bumps))
    kind = PhantomKind.BUMP if n_bumps == 1 else PhantomKind.MULTIBUMP
    return PhantomSpec(kind, centers, radii, amps, velocity_part=velocity_part)
