"""
Domain types and 2D frame transforms.

Frame convention: at heading 0 the device forward axis is world +x. Headings
and bearings are counterclockwise-positive radians in [-pi, pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

Vec2 = Tuple[float, float]

TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wrap any finite angle into [-pi, pi)."""
    wrapped = (angle + math.pi) % TWO_PI - math.pi
    # float modulo can land exactly on +pi for inputs just below -pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


def _as_vec(p: Sequence[float]) -> Vec2:
    return (float(p[0]), float(p[1]))


@dataclass(frozen=True)
class AnchorTag:
    """Fixed reference tag at a known world position."""

    id: int
    position: Vec2

    def __post_init__(self) -> None:
        pos = _as_vec(self.position)
        if not all(math.isfinite(c) for c in pos):
            raise ValueError(f"anchor {self.id} has non-finite position {pos}")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class Pose:
    """User position and absolute heading at a timestamp."""

    position: Vec2
    heading: float
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _as_vec(self.position))
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))


@dataclass(frozen=True)
class TagMeasurement:
    """One range/bearing observation of an anchor, bearing in the device frame."""

    anchor_id: int
    range_m: float
    bearing_rad: float
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.range_m) and self.range_m >= 0.0):
            raise ValueError(f"range must be finite and >= 0, got {self.range_m}")
        object.__setattr__(self, "bearing_rad", normalize_angle(float(self.bearing_rad)))


def relative_to_world(pose: Pose, offset: Sequence[float]) -> Vec2:
    """Map a device-frame offset into world coordinates."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    dx, dy = offset[0], offset[1]
    return (pose.position[0] + c * dx - s * dy, pose.position[1] + s * dx + c * dy)


def world_to_relative(pose: Pose, point: Sequence[float]) -> Vec2:
    """Inverse of :func:`relative_to_world`."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    dx = point[0] - pose.position[0]
    dy = point[1] - pose.position[1]
    return (c * dx + s * dy, -s * dx + c * dy)


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
