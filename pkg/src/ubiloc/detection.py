"""
Outdoor/indoor transition detector.

GPS SNR and ambient light are smoothed with exponential moving averages. A
drop of the GPS average below ``gps_low_threshold`` opens a TRANSITION; if it
holds for ``dwell_s`` and the light average confirms (dark enough), the
detector goes INDOOR and emits WENT_INDOOR. Leaving works the same way with
``gps_high_threshold``, which sits above the low threshold for hysteresis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple


class Mode(enum.Enum):
    OUTDOOR = "outdoor"
    TRANSITION = "transition"
    INDOOR = "indoor"


class Event(enum.Enum):
    WENT_INDOOR = "went_indoor"
    WENT_OUTDOOR = "went_outdoor"


class OrderingError(ValueError):
    """Samples or measurements arrived out of timestamp order."""


@dataclass(frozen=True)
class DetectorConfig:
    gps_low_threshold: float = 15.0
    gps_high_threshold: float = 25.0
    light_indoor_threshold: float = 200.0
    dwell_s: float = 3.0
    ema_alpha: float = 0.2
    # accelerometer is logged but only gates when this is enabled
    require_motion: bool = False
    accel_motion_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.gps_high_threshold <= self.gps_low_threshold:
            raise ValueError("gps_high_threshold must exceed gps_low_threshold")
        if not 0.0 < self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must be in (0, 1]")
        if self.dwell_s < 0:
            raise ValueError("dwell_s must be >= 0")


@dataclass(frozen=True)
class DetectorState:
    mode: Mode = Mode.OUTDOOR
    mode_entered_at: float = float("-inf")
    gps_ema: Optional[float] = None
    light_ema: Optional[float] = None
    # mode the TRANSITION started from; meaningless outside TRANSITION
    origin: Mode = Mode.OUTDOOR
    last_timestamp: Optional[float] = None


def detector_step(
    state: DetectorState, sample, config: DetectorConfig = DetectorConfig()
) -> Tuple[DetectorState, Optional[Event]]:
    t = sample.timestamp
    if state.last_timestamp is not None and t <= state.last_timestamp:
        raise OrderingError(f"sample at t={t} is not after t={state.last_timestamp}")

    a = config.ema_alpha
    if state.gps_ema is None:
        gps, light = sample.gps_snr, sample.light_lux
    else:
        gps = a * sample.gps_snr + (1 - a) * state.gps_ema
        light = a * sample.light_lux + (1 - a) * state.light_ema
    state = replace(state, gps_ema=gps, light_ema=light, last_timestamp=t)

    going_in = gps < config.gps_low_threshold
    going_out = gps > config.gps_high_threshold
    dark = light < config.light_indoor_threshold
    moving = (not config.require_motion) or sample.accel_var >= config.accel_motion_threshold

    if state.mode is Mode.OUTDOOR:
        if going_in:
            state = replace(state, mode=Mode.TRANSITION, mode_entered_at=t, origin=Mode.OUTDOOR)
        else:
            return state, None
    elif state.mode is Mode.INDOOR:
        if going_out:
            state = replace(state, mode=Mode.TRANSITION, mode_entered_at=t, origin=Mode.INDOOR)
        else:
            return state, None

    # TRANSITION
    if state.origin is Mode.OUTDOOR:
        if not going_in:
            return replace(state, mode=Mode.OUTDOOR, mode_entered_at=t), None
        if t - state.mode_entered_at >= config.dwell_s and dark and moving:
            return replace(state, mode=Mode.INDOOR, mode_entered_at=t), Event.WENT_INDOOR
    else:
        if not going_out:
            return replace(state, mode=Mode.INDOOR, mode_entered_at=t), None
        if t - state.mode_entered_at >= config.dwell_s and not dark:
            return replace(state, mode=Mode.OUTDOOR, mode_entered_at=t), Event.WENT_OUTDOOR
    return state, None


def run_detector(
    samples: Iterable, config: DetectorConfig = DetectorConfig()
) -> List[Tuple[float, Event]]:
    """Replay a sample stream and collect (timestamp, event) pairs."""
    state = DetectorState()
    events = []
    for s in samples:
        state, ev = detector_step(state, s, config)
        if ev is not None:
            events.append((s.timestamp, ev))
    return events
