"""Viewing-sphere arithmetic on the (azimuth, elevation) angle plane.

Azimuth lives in [0, 360) and wraps; elevation lives in [-90, 90] and
clamps (no pole crossing). Distances and rectangle overlaps are computed
on the angle plane with wrap-aware azimuth differences, not on the true
sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

DEFAULT_H_SPAN = 65.5
DEFAULT_V_SPAN = DEFAULT_H_SPAN * 3.0 / 4.0  # 4:3 aspect ratio


def wrap_azimuth(azimuth: float) -> float:
    """Normalize an azimuth into [0, 360)."""
    wrapped = azimuth % 360.0
    # Float mod of a tiny negative value can round up to exactly 360.0.
    return 0.0 if wrapped == 360.0 else wrapped


def clamp_elevation(elevation: float) -> float:
    """Clamp an elevation into [-90, 90]."""
    return min(90.0, max(-90.0, elevation))


def signed_azimuth_delta(delta: float) -> float:
    """Reduce an azimuth difference to the signed shortest form in (-180, 180]."""
    reduced = (delta + 180.0) % 360.0 - 180.0
    return 180.0 if reduced == -180.0 else reduced


def signed_azimuth_delta_array(delta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`signed_azimuth_delta`."""
    reduced = np.mod(delta + 180.0, 360.0) - 180.0
    return np.where(reduced == -180.0, 180.0, reduced)


@dataclass(frozen=True)
class ViewingAngle:
    """A point on the viewing sphere, in degrees.

    The constructor enforces the type invariants: azimuth is wrapped into
    [0, 360) and elevation is clamped into [-90, 90].
    """

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (math.isfinite(self.azimuth) and math.isfinite(self.elevation)):
            raise InvalidInput(f"non-finite viewing angle ({self.azimuth}, {self.elevation})")
        object.__setattr__(self, "azimuth", wrap_azimuth(float(self.azimuth)))
        object.__setattr__(self, "elevation", clamp_elevation(float(self.elevation)))


@dataclass(frozen=True)
class Action:
    """A raw steering delta in degrees per frame; not normalized."""

    d_azimuth: float
    d_elevation: float

    def __post_init__(self):
        if not (math.isfinite(self.d_azimuth) and math.isfinite(self.d_elevation)):
            raise InvalidInput(f"non-finite action ({self.d_azimuth}, {self.d_elevation})")


@dataclass(frozen=True)
class NFoV:
    """An axis-aligned rectangle on the angle plane centered at a viewing angle.

    v_span defaults to h_span * 3/4 (a 4:3 window).
    """

    center: ViewingAngle
    h_span: float = DEFAULT_H_SPAN
    v_span: float | None = None

    def __post_init__(self):
        if self.v_span is None:
            object.__setattr__(self, "v_span", self.h_span * 3.0 / 4.0)
        if not (self.h_span > 0.0 and self.v_span > 0.0):
            raise InvalidInput(f"NFoV spans must be positive, got ({self.h_span}, {self.v_span})")

    def elevation_extent(self) -> tuple[float, float]:
        """Vertical extent [low, high], clipped to the [-90, 90] elevation range."""
        half = self.v_span / 2.0
        low = max(-90.0, self.center.elevation - half)
        high = min(90.0, self.center.elevation + half)
        return low, high

    def area(self) -> float:
        low, high = self.elevation_extent()
        return self.h_span * (high - low)


def apply_action(prev: ViewingAngle, delta: Action) -> ViewingAngle:
    """Steer ``prev`` by ``delta``: azimuth wraps, elevation clamps."""
    return ViewingAngle(prev.azimuth + delta.d_azimuth, prev.elevation + delta.d_elevation)


def angular_offset(start: ViewingAngle, target: ViewingAngle) -> Action:
    """Signed shortest offset taking ``start`` to ``target``.

    The azimuth component is reduced into (-180, 180]; the elevation
    component is the plain difference. Applying the result to ``start``
    reaches ``target`` exactly whenever no elevation clamping occurs.
    """
    return Action(
        signed_azimuth_delta(target.azimuth - start.azimuth),
        target.elevation - start.elevation,
    )


def angular_distance(a: ViewingAngle, b: ViewingAngle) -> float:
    """Euclidean norm of the wrap-aware offset between two viewing angles."""
    off = angular_offset(a, b)
    return math.hypot(off.d_azimuth, off.d_elevation)


def _azimuth_overlap(width: float, center_delta: float) -> float:
    """Overlap length of two azimuth arcs of equal ``width`` whose centers differ
    by ``center_delta`` degrees (shortest absolute difference)."""
    d = abs(center_delta)
    near = max(0.0, width - d)
    far = max(0.0, width - (360.0 - d))
    return min(width, near + far)


def nfov_iou(a: NFoV, b: NFoV) -> float:
    """Intersection-over-union of two equal-span NFoV rectangles.

    Azimuth overlap is wrap-aware; elevation extents are clipped to
    [-90, 90] before intersecting. Symmetric, in [0, 1], and exactly 1
    iff the centers coincide.
    """
    if a.h_span != b.h_span or a.v_span != b.v_span:
        raise InvalidInput(
            f"NFoV spans must match: ({a.h_span}, {a.v_span}) vs ({b.h_span}, {b.v_span})"
        )
    ov_az = _azimuth_overlap(a.h_span, signed_azimuth_delta(b.center.azimuth - a.center.azimuth))
    a_low, a_high = a.elevation_extent()
    b_low, b_high = b.elevation_extent()
    ov_el = max(0.0, min(a_high, b_high) - max(a_low, b_low))
    inter = ov_az * ov_el
    union = a.area() + b.area() - inter
    return inter / union
