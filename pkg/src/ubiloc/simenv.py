"""
Deterministic scenario simulator.

Floor plans are lists of wall segments, anchors are fixed tags, and the user
walks a piecewise-linear waypoint path. Every random draw comes from a
generator keyed on (seed, stream, sample index), so any single pose or sensor
sample can be regenerated in isolation and in any order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ubiloc.detection import DetectorConfig
from ubiloc.geometry import (
    AnchorTag,
    Pose,
    TagMeasurement,
    Vec2,
    euclidean_distance,
    normalize_angle,
    world_to_relative,
)

Segment = Tuple[Vec2, Vec2]

# random stream tags, part of the generator key
_STREAM_RANGING = 1
_STREAM_SENSORS = 2

GPS_SNR_OUTDOOR = 40.0
GPS_SNR_INDOOR = 5.0
GPS_SNR_SIGMA = 1.0
LIGHT_OUTDOOR_LUX = 5000.0
LIGHT_INDOOR_LUX = 80.0
LIGHT_REL_SIGMA = 0.05
ACCEL_VAR_WALKING = 2.0
ACCEL_VAR_STILL = 0.05
# 3 s ramp: exponential settles to within 1 SNR unit of the indoor level
RAMP_S = 3.0
RAMP_TAU_S = RAMP_S / math.log(GPS_SNR_OUTDOOR - GPS_SNR_INDOOR)

RSS_MIN_DISTANCE_M = 0.1
RSS_NLOS_PENALTY_DB = 10.0


class ScenarioError(ValueError):
    """Scenario failed validation or could not be parsed."""


@dataclass(frozen=True)
class MagDisturbance:
    """Constant magnetometer heading offset applied during [start_s, end_s)."""

    start_s: float
    end_s: float
    offset_rad: float


@dataclass(frozen=True)
class NoiseModel:
    range_sigma_los_m: float = 0.05
    range_sigma_nlos_m: float = 0.15
    range_bias_nlos_m: float = 0.10
    range_sigma_per_m: float = 0.01
    bearing_sigma_rad: float = 0.0873
    detection_radius_m: float = 15.0
    gyro_drift_rad_per_s: float = 0.002
    mag_sigma_rad: float = 0.02
    mag_disturbance: Tuple[MagDisturbance, ...] = ()

    def __post_init__(self) -> None:
        sigmas = (
            self.range_sigma_los_m,
            self.range_sigma_nlos_m,
            self.range_bias_nlos_m,
            self.range_sigma_per_m,
            self.bearing_sigma_rad,
            self.mag_sigma_rad,
        )
        if any(not math.isfinite(s) or s < 0 for s in sigmas):
            raise ScenarioError("noise sigmas and bias must be finite and >= 0")
        if not self.detection_radius_m > 0:
            raise ScenarioError("detection_radius_m must be > 0")
        if self.range_sigma_nlos_m < self.range_sigma_los_m:
            raise ScenarioError("range_sigma_nlos_m must be >= range_sigma_los_m")
        object.__setattr__(self, "mag_disturbance", tuple(self.mag_disturbance))

    @classmethod
    def noiseless(cls, detection_radius_m: float = 15.0) -> "NoiseModel":
        return cls(
            range_sigma_los_m=0.0,
            range_sigma_nlos_m=0.0,
            range_bias_nlos_m=0.0,
            range_sigma_per_m=0.0,
            bearing_sigma_rad=0.0,
            detection_radius_m=detection_radius_m,
            gyro_drift_rad_per_s=0.0,
            mag_sigma_rad=0.0,
        )

    def range_sigma(self, distance: float, los: bool) -> float:
        base = self.range_sigma_los_m if los else self.range_sigma_nlos_m
        return base + self.range_sigma_per_m * distance

    def mag_offset(self, t: float) -> float:
        return sum(d.offset_rad for d in self.mag_disturbance if d.start_s <= t < d.end_s)


@dataclass(frozen=True)
class Waypoint:
    position: Vec2
    dwell_s: float = 0.0


@dataclass(frozen=True)
class Scenario:
    name: str
    walls: Tuple[Segment, ...]
    anchors: Tuple[AnchorTag, ...]
    waypoints: Tuple[Waypoint, ...]
    speed_mps: float = 1.0
    sample_hz: float = 5.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    # user crosses into the building at this time; None end means stays inside
    indoor_start_s: float = 0.0
    indoor_end_s: Optional[float] = None
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        validate_scenario(self)

    def anchor_map(self) -> Dict[int, AnchorTag]:
        return {a.id: a for a in self.anchors}

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def with_noise(self, **changes: Any) -> "Scenario":
        return replace(self, noise=replace(self.noise, **changes))

    def with_anchor_prefix(self, count: int) -> "Scenario":
        """Keep the `count` anchors with the smallest ids."""
        kept = sorted(self.anchors, key=lambda a: a.id)[:count]
        kept_ids = {a.id for a in kept}
        return replace(self, anchors=tuple(a for a in self.anchors if a.id in kept_ids))


def validate_scenario(sc: Scenario) -> None:
    if len(sc.anchors) < 1:
        raise ScenarioError("scenario needs at least one anchor")
    ids = [a.id for a in sc.anchors]
    if len(set(ids)) != len(ids):
        raise ScenarioError("anchor ids must be unique")
    if len(sc.waypoints) < 2:
        raise ScenarioError("scenario needs at least two waypoints")
    if not (math.isfinite(sc.speed_mps) and sc.speed_mps > 0):
        raise ScenarioError("speed_mps must be > 0")
    if not (math.isfinite(sc.sample_hz) and sc.sample_hz > 0):
        raise ScenarioError("sample_hz must be > 0")
    if not 0 <= sc.seed < 2**64:
        raise ScenarioError("seed must be a 64-bit unsigned integer")
    for a, b in sc.walls:
        if euclidean_distance(a, b) == 0.0:
            raise ScenarioError(f"zero-length wall at {a}")
    for wp in sc.waypoints:
        if wp.dwell_s < 0 or not math.isfinite(wp.dwell_s):
            raise ScenarioError("dwell_s must be finite and >= 0")
    for prev, cur in zip(sc.waypoints, sc.waypoints[1:]):
        if euclidean_distance(prev.position, cur.position) == 0.0 and cur.dwell_s == 0.0:
            raise ScenarioError(f"coincident consecutive waypoints at {cur.position} with zero dwell")


def anchors_collinear(anchors: Sequence[AnchorTag], tol: float = 1e-9) -> bool:
    """True when all anchor positions lie on one line (or there are fewer than 3)."""
    if len(anchors) < 3:
        return True
    pts = np.array([a.position for a in anchors], dtype=float)
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return bool(sv[1] <= tol * max(1.0, sv[0]))


# --- trajectory -------------------------------------------------------------


def _phases(sc: Scenario) -> List[Tuple[float, float, Vec2, Vec2, float]]:
    """(t_start, t_end, p_start, p_end, heading) for each dwell and travel leg."""
    wps = sc.waypoints
    headings: List[float] = []
    for a, b in zip(wps, wps[1:]):
        dx = b.position[0] - a.position[0]
        dy = b.position[1] - a.position[1]
        headings.append(math.atan2(dy, dx) if (dx or dy) else float("nan"))
    # zero-length legs keep the previous heading
    last = next((h for h in headings if not math.isnan(h)), 0.0)
    for i, h in enumerate(headings):
        if math.isnan(h):
            headings[i] = last
        last = headings[i]

    phases = []
    t = 0.0
    for i, wp in enumerate(wps):
        heading_here = headings[i - 1] if i > 0 else headings[0]
        if wp.dwell_s > 0:
            phases.append((t, t + wp.dwell_s, wp.position, wp.position, heading_here))
            t += wp.dwell_s
        if i + 1 < len(wps):
            length = euclidean_distance(wp.position, wps[i + 1].position)
            if length > 0:
                dt = length / sc.speed_mps
                phases.append((t, t + dt, wp.position, wps[i + 1].position, headings[i]))
                t += dt
    return phases


def trajectory_duration(sc: Scenario) -> float:
    phases = _phases(sc)
    return phases[-1][1] if phases else 0.0


def generate_trajectory(sc: Scenario) -> List[Pose]:
    """Ground-truth poses sampled at ``sample_hz`` along the waypoint path."""
    phases = _phases(sc)
    duration = phases[-1][1]
    n = int(math.floor(duration * sc.sample_hz + 1e-9)) + 1
    poses = []
    j = 0
    for k in range(n):
        t = k / sc.sample_hz
        while j + 1 < len(phases) and t >= phases[j][1]:
            j += 1
        t0, t1, p0, p1, heading = phases[j]
        frac = 1.0 if t1 <= t0 else min(1.0, max(0.0, (t - t0) / (t1 - t0)))
        pos = (p0[0] + frac * (p1[0] - p0[0]), p0[1] + frac * (p1[1] - p0[1]))
        poses.append(Pose(pos, heading, t))
    return poses


# --- line of sight ----------------------------------------------------------


def _walls_array(walls: Sequence[Segment]) -> np.ndarray:
    if len(walls) == 0:
        return np.empty((0, 4))
    return np.asarray([[a[0], a[1], b[0], b[1]] for a, b in walls], dtype=float)


def _blocked(a: Sequence[float], b: Sequence[float], w: np.ndarray) -> bool:
    if w.shape[0] == 0:
        return False
    # fixed endpoint order makes the rounding, and so the answer, symmetric
    if (b[0], b[1]) < (a[0], a[1]):
        a, b = b, a
    ax, ay = a[0], a[1]
    bx, by = b[0], b[1]
    cx, cy, dx, dy = w[:, 0], w[:, 1], w[:, 2], w[:, 3]

    def orient(px, py, qx, qy, rx, ry):
        return (qx - px) * (ry - py) - (qy - py) * (rx - px)

    o1 = orient(ax, ay, bx, by, cx, cy)
    o2 = orient(ax, ay, bx, by, dx, dy)
    o3 = orient(cx, cy, dx, dy, ax, ay)
    o4 = orient(cx, cy, dx, dy, bx, by)
    # touching (an orientation of exactly zero) counts as crossing
    proper = (np.sign(o1) * np.sign(o2) <= 0) & (np.sign(o3) * np.sign(o4) <= 0)
    if not proper.any():
        return False
    # both segments collinear: sign test passes trivially, need overlap check
    collinear = (o1 == 0) & (o2 == 0)
    if not collinear.any():
        return True
    for i in np.nonzero(proper)[0]:
        if not collinear[i]:
            return True
        if _collinear_overlap((ax, ay), (bx, by), (cx[i], cy[i]), (dx[i], dy[i])):
            return True
    return False


def _collinear_overlap(a, b, c, d) -> bool:
    axis = 0 if abs(b[0] - a[0]) >= abs(b[1] - a[1]) else 1
    lo1, hi1 = sorted((a[axis], b[axis]))
    lo2, hi2 = sorted((c[axis], d[axis]))
    if lo1 == hi1 and lo2 == hi2:
        return a == c
    return max(lo1, lo2) <= min(hi1, hi2)


def is_los(a: Sequence[float], b: Sequence[float], walls: Sequence[Segment]) -> bool:
    """True when the segment a-b touches no wall."""
    w = walls if isinstance(walls, np.ndarray) else _walls_array(walls)
    return not _blocked(a, b, w)


# --- measurement synthesis --------------------------------------------------


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, int(index)])


def synthesize_measurements(
    pose: Pose,
    sc: Scenario,
    index: int,
    walls: Optional[np.ndarray] = None,
) -> List[TagMeasurement]:
    """Noisy range/bearing observations of every anchor within detection radius.

    ``index`` is the sample counter; together with ``sc.seed`` it fixes the
    random draws. Draws are taken for every anchor slot whether or not it is
    detected, so a given (sample, anchor slot) always sees the same noise.
    """
    noise = sc.noise
    w = _walls_array(sc.walls) if walls is None else walls
    draws = _rng(sc.seed, _STREAM_RANGING, index).standard_normal((len(sc.anchors), 2))
    out = []
    for j, anchor in enumerate(sc.anchors):
        true_range = euclidean_distance(pose.position, anchor.position)
        if true_range > noise.detection_radius_m:
            continue
        los = not _blocked(pose.position, anchor.position, w)
        sigma = noise.range_sigma(true_range, los)
        rng_m = true_range + (0.0 if los else noise.range_bias_nlos_m) + sigma * draws[j, 0]
        rel = world_to_relative(pose, anchor.position)
        bearing = math.atan2(rel[1], rel[0]) + noise.bearing_sigma_rad * draws[j, 1]
        out.append(TagMeasurement(anchor.id, max(0.0, rng_m), normalize_angle(bearing), pose.timestamp))
    return out


def rss_proxy(pose: Pose, sc: Scenario, walls: Optional[np.ndarray] = None) -> Dict[int, float]:
    """Synthetic log-distance received strength (dB, higher is stronger) per anchor."""
    w = _walls_array(sc.walls) if walls is None else walls
    out = {}
    for anchor in sc.anchors:
        d = euclidean_distance(pose.position, anchor.position)
        penalty = 0.0 if not _blocked(pose.position, anchor.position, w) else RSS_NLOS_PENALTY_DB
        out[anchor.id] = -(20.0 * math.log10(max(d, RSS_MIN_DISTANCE_M)) + penalty)
    return out


# --- auxiliary sensors -------------------------------------------------------


@dataclass(frozen=True)
class SensorSample:
    timestamp: float
    gps_snr: float
    light_lux: float
    accel_var: float
    gyro_rate: float
    mag_heading: float


def _indoor_fraction(t: float, interval: Optional[Tuple[float, Optional[float]]]) -> float:
    if interval is None:
        return 0.0
    t_in, t_out = interval
    if t < t_in:
        return 0.0
    if t_out is None or t < t_out:
        return 1.0 - math.exp(-(t - t_in) / RAMP_TAU_S)
    at_exit = 1.0 - math.exp(-(t_out - t_in) / RAMP_TAU_S)
    return at_exit * math.exp(-(t - t_out) / RAMP_TAU_S)


def synthesize_sensor_stream(
    sc: Scenario,
    ground_truth: Sequence[Pose],
    indoor_interval: Optional[Tuple[float, Optional[float]]],
    seed: Optional[int] = None,
) -> List[SensorSample]:
    """GPS/light/accelerometer/gyro/magnetometer samples at the pose timestamps.

    ``indoor_interval`` is (entry time, exit time or None). GPS SNR and light
    decay exponentially toward their indoor levels after entry and recover
    after exit.
    """
    seed = sc.seed if seed is None else seed
    noise = sc.noise
    samples = []
    prev: Optional[Pose] = None
    for i, pose in enumerate(ground_truth):
        z = _rng(seed, _STREAM_SENSORS, i).standard_normal(4)
        t = pose.timestamp
        f = _indoor_fraction(t, indoor_interval)
        gps = GPS_SNR_OUTDOOR - (GPS_SNR_OUTDOOR - GPS_SNR_INDOOR) * f + GPS_SNR_SIGMA * z[0]
        light = (LIGHT_OUTDOOR_LUX - (LIGHT_OUTDOOR_LUX - LIGHT_INDOOR_LUX) * f) * (1.0 + LIGHT_REL_SIGMA * z[1])
        moving = prev is not None and prev.position != pose.position
        accel = (ACCEL_VAR_WALKING if moving else ACCEL_VAR_STILL) * (1.0 + 0.1 * z[2]) ** 2
        if prev is None:
            rate = 0.0
        else:
            rate = normalize_angle(pose.heading - prev.heading) / (t - prev.timestamp)
        mag = pose.heading + noise.mag_sigma_rad * z[3] + noise.mag_offset(t)
        samples.append(
            SensorSample(
                timestamp=t,
                gps_snr=max(0.0, gps),
                light_lux=max(0.0, light),
                accel_var=accel,
                gyro_rate=rate + noise.gyro_drift_rad_per_s,
                mag_heading=normalize_angle(mag),
            )
        )
        prev = pose
    return samples


# --- scenario files ----------------------------------------------------------


def _noise_from_dict(d: Dict[str, Any]) -> NoiseModel:
    kw: Dict[str, Any] = {}
    for key in ("range_sigma_los_m", "range_sigma_nlos_m", "range_bias_nlos_m", "range_sigma_per_m", "detection_radius_m"):
        if key in d:
            kw[key] = float(d[key])
    if "bearing_sigma_deg" in d:
        kw["bearing_sigma_rad"] = math.radians(float(d["bearing_sigma_deg"]))
    if "gyro_drift_deg_per_s" in d:
        kw["gyro_drift_rad_per_s"] = math.radians(float(d["gyro_drift_deg_per_s"]))
    if "mag_sigma_deg" in d:
        kw["mag_sigma_rad"] = math.radians(float(d["mag_sigma_deg"]))
    if "mag_disturbance" in d:
        kw["mag_disturbance"] = tuple(
            MagDisturbance(float(m["start_s"]), float(m["end_s"]), math.radians(float(m["offset_deg"])))
            for m in d["mag_disturbance"]
        )
    unknown = set(d) - set(_NOISE_KEYS)
    if unknown:
        raise ScenarioError(f"unknown noise keys: {sorted(unknown)}")
    return NoiseModel(**kw)


_NOISE_KEYS = (
    "range_sigma_los_m",
    "range_sigma_nlos_m",
    "range_bias_nlos_m",
    "range_sigma_per_m",
    "bearing_sigma_deg",
    "detection_radius_m",
    "gyro_drift_deg_per_s",
    "mag_sigma_deg",
    "mag_disturbance",
)


def _noise_to_dict(n: NoiseModel) -> Dict[str, Any]:
    return {
        "range_sigma_los_m": n.range_sigma_los_m,
        "range_sigma_nlos_m": n.range_sigma_nlos_m,
        "range_bias_nlos_m": n.range_bias_nlos_m,
        "range_sigma_per_m": n.range_sigma_per_m,
        "bearing_sigma_deg": math.degrees(n.bearing_sigma_rad),
        "detection_radius_m": n.detection_radius_m,
        "gyro_drift_deg_per_s": math.degrees(n.gyro_drift_rad_per_s),
        "mag_sigma_deg": math.degrees(n.mag_sigma_rad),
        "mag_disturbance": [
            {"start_s": m.start_s, "end_s": m.end_s, "offset_deg": math.degrees(m.offset_rad)}
            for m in n.mag_disturbance
        ],
    }


def scenario_from_dict(d: Dict[str, Any]) -> Scenario:
    try:
        walls = tuple(((float(w[0][0]), float(w[0][1])), (float(w[1][0]), float(w[1][1]))) for w in d.get("walls", []))
        anchors = tuple(AnchorTag(int(a["id"]), (float(a["x"]), float(a["y"]))) for a in d["anchors"])
        waypoints = tuple(
            Waypoint((float(w["x"]), float(w["y"])), float(w.get("dwell_s", 0.0))) for w in d["waypoints"]
        )
        detector = DetectorConfig(**d["detector"]) if "detector" in d else DetectorConfig()
        end = d.get("indoor_end_s")
        return Scenario(
            name=str(d["name"]),
            walls=walls,
            anchors=anchors,
            waypoints=waypoints,
            speed_mps=float(d["speed_mps"]),
            sample_hz=float(d["sample_hz"]),
            noise=_noise_from_dict(d.get("noise", {})),
            seed=int(d["seed"]),
            indoor_start_s=float(d.get("indoor_start_s", 0.0)),
            indoor_end_s=None if end is None else float(end),
            detector=detector,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"malformed scenario: {exc!r}") from exc


def scenario_to_dict(sc: Scenario) -> Dict[str, Any]:
    return {
        "name": sc.name,
        "walls": [[list(a), list(b)] for a, b in sc.walls],
        "anchors": [{"id": a.id, "x": a.position[0], "y": a.position[1]} for a in sc.anchors],
        "waypoints": [{"x": w.position[0], "y": w.position[1], "dwell_s": w.dwell_s} for w in sc.waypoints],
        "speed_mps": sc.speed_mps,
        "sample_hz": sc.sample_hz,
        "noise": _noise_to_dict(sc.noise),
        "seed": sc.seed,
        "indoor_start_s": sc.indoor_start_s,
        "indoor_end_s": sc.indoor_end_s,
        "detector": asdict(sc.detector),
    }


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must hold a JSON object")
    return scenario_from_dict(data)


BUNDLED = ("campus", "apartment")


def bundled_scenario(name: str) -> Scenario:
    """One of the packaged reference layouts: ``campus`` or ``apartment``."""
    if name not in BUNDLED:
        raise ScenarioError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    text = resources.files("ubiloc.scenarios").joinpath(f"{name}.json").read_text()
    return scenario_from_dict(json.loads(text))
