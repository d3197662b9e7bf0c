"""
Per-pose relative localization.

Heading comes from a gyroscope integrated between "reliable" magnetometer
moments. The magnetometer is trusted over a window when its heading change
tracks the gyro-integrated change and it is internally steady; the heading is
then re-anchored to it. Range/bearing pairs are converted to Cartesian
offsets in the device frame and rotated by the heading into the world frame.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ubiloc.geometry import (
    AnchorTag,
    Pose,
    TagMeasurement,
    Vec2,
    normalize_angle,
    relative_to_world,
)


class HeadingSource(enum.Enum):
    MAG_ANCHORED = "mag_anchored"
    GYRO_PROPAGATED = "gyro_propagated"


@dataclass(frozen=True)
class HeadingConfig:
    window: int = 10
    agreement_rad: float = 0.05
    mag_circular_std_rad: float = 0.1


@dataclass(frozen=True)
class HeadingEstimate:
    heading: float
    source: HeadingSource
    anchored_at: float
    timestamp: float = 0.0


def circular_mean(angles: Sequence[float]) -> float:
    a = np.asarray(angles, dtype=float)
    return normalize_angle(math.atan2(np.sin(a).mean(), np.cos(a).mean()))


def circular_std(angles: Sequence[float]) -> float:
    """sqrt(-2 ln R), R the mean resultant length."""
    a = np.asarray(angles, dtype=float)
    r = math.hypot(np.sin(a).mean(), np.cos(a).mean())
    if r >= 1.0:
        return 0.0
    if r <= 0.0:
        return math.inf
    return math.sqrt(-2.0 * math.log(r))


def _gyro_increments(window) -> np.ndarray:
    """Trapezoidal heading increments between consecutive samples."""
    t = np.array([s.timestamp for s in window])
    g = np.array([s.gyro_rate for s in window])
    return 0.5 * (g[1:] + g[:-1]) * np.diff(t)


def initial_heading(window) -> HeadingEstimate:
    """Start-of-trajectory heading from the window-mean magnetometer reading."""
    if len(window) == 0:
        raise ValueError("initial_heading needs at least one sample")
    last = window[-1]
    return HeadingEstimate(
        heading=circular_mean([s.mag_heading for s in window]),
        source=HeadingSource.MAG_ANCHORED,
        anchored_at=last.timestamp,
        timestamp=last.timestamp,
    )


def fuse_heading(prev: HeadingEstimate, window, config: HeadingConfig = HeadingConfig()) -> HeadingEstimate:
    """Advance the heading to the newest sample of ``window``.

    ``window`` holds the most recent samples in time order, newest last; the
    previous estimate is taken to be at the second-newest sample.
    """
    if len(window) == 0:
        raise ValueError("fuse_heading needs a non-empty window")
    newest = window[-1]
    if len(window) == 1:
        return HeadingEstimate(prev.heading, HeadingSource.GYRO_PROPAGATED, prev.anchored_at, newest.timestamp)

    steps = _gyro_increments(window)
    propagated = normalize_angle(prev.heading + steps[-1])

    # gyro change from each sample to the newest one
    to_newest = np.concatenate([np.cumsum(steps[::-1])[::-1], [0.0]])
    mag = np.array([s.mag_heading for s in window])
    gyro_change = float(to_newest[0])
    mag_change = normalize_angle(mag[-1] - mag[0])
    agree = abs(normalize_angle(mag_change - gyro_change)) <= config.agreement_rad
    # mag readings carried forward to the newest time, so a turn inside the
    # window does not count as magnetometer scatter
    carried = mag + to_newest
    steady = circular_std(carried) < config.mag_circular_std_rad

    if agree and steady:
        return HeadingEstimate(
            heading=circular_mean(carried),
            source=HeadingSource.MAG_ANCHORED,
            anchored_at=newest.timestamp,
            timestamp=newest.timestamp,
        )
    return HeadingEstimate(propagated, HeadingSource.GYRO_PROPAGATED, prev.anchored_at, newest.timestamp)


def track_heading(samples, config: HeadingConfig = HeadingConfig()) -> List[HeadingEstimate]:
    """Heading estimate at every sample of a stream."""
    out: List[HeadingEstimate] = []
    for i in range(len(samples)):
        window = samples[max(0, i - config.window + 1) : i + 1]
        if i == 0:
            out.append(initial_heading(window))
        else:
            out.append(fuse_heading(out[-1], window, config))
    return out


def polar_to_local(m: TagMeasurement) -> Vec2:
    return (m.range_m * math.cos(m.bearing_rad), m.range_m * math.sin(m.bearing_rad))


def project_anchor(pose_estimate: Pose, m: TagMeasurement) -> Vec2:
    """World position of the measured anchor as seen from ``pose_estimate``."""
    return relative_to_world(pose_estimate, polar_to_local(m))


def one_shot_fix(heading: HeadingEstimate | float, m: TagMeasurement, anchor: AnchorTag) -> Vec2:
    """User position from one known anchor plus its range, bearing and the heading."""
    if anchor.id != m.anchor_id:
        raise ValueError(f"measurement of anchor {m.anchor_id} paired with anchor {anchor.id}")
    h = heading.heading if isinstance(heading, HeadingEstimate) else float(heading)
    offset = relative_to_world(Pose((0.0, 0.0), h), polar_to_local(m))
    return (anchor.position[0] - offset[0], anchor.position[1] - offset[1])
