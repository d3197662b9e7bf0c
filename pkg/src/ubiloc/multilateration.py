"""
Weighted range multilateration and the per-pose multishot pipeline.

Each selected anchor contributes a ring ||p - a_i|| = d_i whose weight is the
inverse variance of its ranging noise. The position minimizing the weighted
squared ring residuals is found by damped Gauss-Newton, started from the
previous fix or from the closed-form linearization obtained by subtracting
the first ring equation from the others.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ubiloc.detection import DetectorState, Event, detector_step
from ubiloc.geometry import AnchorTag, Pose, TagMeasurement, Vec2
from ubiloc.oneshot import HeadingConfig, HeadingEstimate, fuse_heading, initial_heading, one_shot_fix
from ubiloc.selector import (
    DEFAULT_POLICY,
    RangeHistory,
    SelectionKind,
    SelectionPolicy,
    select,
    update_history,
)
from ubiloc.simenv import (
    Scenario,
    _walls_array,
    generate_trajectory,
    rss_proxy,
    synthesize_measurements,
    synthesize_sensor_stream,
)

MAX_ITERATIONS = 50
STEP_TOL_M = 1e-9
MAX_HALVINGS = 10
CONDITION_LIMIT = 1e8
# below this step length cost differences drown in rounding, while the
# gradient-based step is still accurate, so the step is taken undamped
LOCAL_STEP_M = 1e-6


class Method(enum.Enum):
    MULTILATERATION = "multilateration"
    ONE_SHOT = "one_shot"
    DEAD_RECKONED = "dead_reckoned"


class DegenerateGeometryError(ValueError):
    """Anchor layout cannot determine a 2D position (e.g. all collinear)."""


class InsufficientAnchorsError(ValueError):
    pass


class NoFixError(RuntimeError):
    """Nothing visible and no earlier estimate to carry forward."""


@dataclass(frozen=True)
class FixResult:
    position: Vec2
    residual_rms_m: float
    anchors_used: Tuple[int, ...]
    method: Method
    condition_ok: bool = True
    iterations: int = 0


def _as_arrays(anchors, with_weight: bool):
    if with_weight:
        pos = np.array([a[0] for a in anchors], dtype=float).reshape(-1, 2)
        rng = np.array([a[1] for a in anchors], dtype=float)
        w = np.array([a[2] for a in anchors], dtype=float)
        return pos, rng, w
    pos = np.array([a[0] for a in anchors], dtype=float).reshape(-1, 2)
    rng = np.array([a[1] for a in anchors], dtype=float)
    return pos, rng


def linear_init(anchors: Sequence[Tuple[Vec2, float]]) -> Vec2:
    """Closed-form estimate from pairwise-subtracted ring equations.

    (x - x_i)^2 + (y - y_i)^2 = d_i^2 minus the same for anchor 1 gives
    2 (a_i - a_1) . p = d_1^2 - d_i^2 + |a_i|^2 - |a_1|^2, linear in p.
    """
    if len(anchors) < 3:
        raise InsufficientAnchorsError(f"linear_init needs >= 3 anchors, got {len(anchors)}")
    pos, d = _as_arrays(anchors, with_weight=False)
    A = 2.0 * (pos[1:] - pos[0])
    b = d[0] ** 2 - d[1:] ** 2 + (pos[1:] ** 2).sum(axis=1) - (pos[0] ** 2).sum()
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size < 2 or sv[1] <= 1e-10 * max(1.0, sv[0]):
        raise DegenerateGeometryError("anchors are collinear; position is not determined")
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return (float(sol[0]), float(sol[1]))


def weighted_cost(p: Sequence[float], pos: np.ndarray, d: np.ndarray, w: np.ndarray) -> float:
    r = np.hypot(p[0] - pos[:, 0], p[1] - pos[:, 1]) - d
    return float(np.dot(w, r * r))


def _residuals_jacobian(p: np.ndarray, pos: np.ndarray, d: np.ndarray):
    diff = p - pos
    dist = np.hypot(diff[:, 0], diff[:, 1])
    safe = np.where(dist > 1e-12, dist, 1.0)
    J = np.where(dist[:, None] > 1e-12, diff / safe[:, None], 0.0)
    return dist - d, J


def _solve_normal(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    a, b, d = H[0, 0], H[0, 1], H[1, 1]
    det = a * d - b * b
    if det > 1e-14 * max(1.0, (a + d) ** 2):
        return np.array([(d * rhs[0] - b * rhs[1]) / det, (a * rhs[1] - b * rhs[0]) / det])
    return np.linalg.lstsq(H, rhs, rcond=None)[0]


def _condition_number(H: np.ndarray) -> float:
    """Ratio of the eigenvalues of a symmetric positive semidefinite 2x2 matrix."""
    a, b, d = H[0, 0], H[0, 1], H[1, 1]
    mean = 0.5 * (a + d)
    spread = math.hypot(0.5 * (a - d), b)
    lo = mean - spread
    return math.inf if lo <= 0 else (mean + spread) / lo


def _gauss_newton(p: np.ndarray, pos: np.ndarray, d: np.ndarray, w: np.ndarray):
    cost = weighted_cost(p, pos, d, w)
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        r, J = _residuals_jacobian(p, pos, d)
        Jw = J * w[:, None]
        step = _solve_normal(J.T @ Jw, -(Jw.T @ r))
        length = float(np.hypot(*step))
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = p + scale * step
            trial_cost = weighted_cost(trial, pos, d, w)
            if trial_cost <= cost or length < LOCAL_STEP_M:
                break
            scale *= 0.5
        else:
            break  # no descent along the GN direction: at the floor of the valley
        p, cost = trial, trial_cost
        # judged on the full step, so halvings far from the minimum cannot
        # end the iteration early
        if length < STEP_TOL_M:
            break
    return p, cost, iterations


def _reflect_across_axis(p: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Mirror ``p`` across the principal line through the anchors."""
    centre = pos.mean(axis=0)
    _, _, vt = np.linalg.svd(pos - centre)
    u = vt[0]
    rel = p - centre
    along = float(np.dot(rel, u)) * u
    return centre + 2.0 * along - rel


def solve_fix(anchors: Sequence[Tuple[Vec2, float, float]], init: Sequence[float]) -> FixResult:
    """Minimize sum_i w_i (||p - a_i|| - d_i)^2 by damped Gauss-Newton.

    ``anchors`` holds (position, range, weight) triples, weights > 0. The
    iteration runs from ``init``, from :func:`linear_init` and from the
    mirror image of the best point across the anchors' main axis; the
    lowest-cost result wins. The fix is flagged ``condition_ok=False`` (but still returned) when the
    normal matrix at the solution has condition number above 1e8.
    """
    if len(anchors) < 3:
        raise InsufficientAnchorsError(f"solve_fix needs >= 3 anchors, got {len(anchors)}")
    pos, d, w = _as_arrays(anchors, with_weight=True)
    p = np.array(init, dtype=float).reshape(2)
    if not (np.isfinite(pos).all() and np.isfinite(d).all() and np.isfinite(w).all() and np.isfinite(p).all()):
        raise ValueError("solve_fix inputs must be finite")
    if (w <= 0).any():
        raise ValueError("weights must be > 0")

    p, cost, iterations = _gauss_newton(p, pos, d, w)
    # Ring costs can have a second, mirror-image minimum on the far side of
    # the anchors' main axis (exterior points, near-collinear layouts). Extra
    # starts from the linearized solution and from the reflection of the
    # current best across that axis keep the solver out of it.
    try:
        starts = [np.array(linear_init(list(zip(pos, d))), dtype=float)]
    except DegenerateGeometryError:
        starts = []
    for alt in starts + [None]:
        if alt is None:
            alt = _reflect_across_axis(p, pos)
        if float(np.hypot(*(alt - p))) <= LOCAL_STEP_M:
            continue
        q, q_cost, q_iter = _gauss_newton(alt, pos, d, w)
        iterations += q_iter
        if q_cost < cost * (1.0 - 1e-9):
            p, cost = q, q_cost

    r, J = _residuals_jacobian(p, pos, d)
    H = J.T @ (J * w[:, None])
    cond = _condition_number(H)
    return FixResult(
        position=(float(p[0]), float(p[1])),
        residual_rms_m=math.sqrt(float(np.dot(w, r * r)) / float(w.sum())),
        anchors_used=(),
        method=Method.MULTILATERATION,
        condition_ok=cond <= CONDITION_LIMIT,
        iterations=iterations,
    )


@dataclass(frozen=True)
class MultishotConfig:
    sigma_floor_m: float = 0.02
    # ranging prior used until an anchor has a few readings in its window
    prior_sigma_m: float = 0.05
    prior_sigma_per_m: float = 0.01
    # weight of the one-shot estimate when blending with the previous position
    one_shot_blend: float = 0.5
    # "variance": plain window variance; "second_difference": trend-free noise estimate
    sigma_estimator: str = "second_difference"


@dataclass(frozen=True)
class MultishotState:
    previous: Optional[FixResult]
    heading: HeadingEstimate


def _weight(history: RangeHistory, m: TagMeasurement, cfg: MultishotConfig) -> float:
    if cfg.sigma_estimator == "variance":
        var = history.variance(m.anchor_id)
        sigma = None if var is None else math.sqrt(var)
    else:
        sigma = history.noise_sigma(m.anchor_id)
    if sigma is None:
        sigma = cfg.prior_sigma_m + cfg.prior_sigma_per_m * m.range_m
    return 1.0 / max(sigma * sigma, cfg.sigma_floor_m**2)


def multishot_step(
    state: MultishotState,
    measurements: Sequence[TagMeasurement],
    anchors: Mapping[int, AnchorTag],
    policy: SelectionPolicy,
    history: RangeHistory,
    rss: Optional[Mapping[int, float]] = None,
    config: MultishotConfig = MultishotConfig(),
) -> FixResult:
    """One pose of the pipeline: record ranges, select anchors, then solve.

    ``history`` is updated in place with ``measurements`` before selection.
    """
    unknown = [m.anchor_id for m in measurements if m.anchor_id not in anchors]
    if unknown:
        raise KeyError(f"measurements reference unknown anchors {unknown}")
    update_history(history, measurements)
    chosen = select(measurements, history, policy, rss)
    prev = state.previous

    if len(chosen) >= 3:
        rings = [(anchors[m.anchor_id].position, m.range_m, _weight(history, m, config)) for m in chosen]
        if prev is not None:
            init = prev.position
        else:
            try:
                init = linear_init([(a, r) for a, r, _ in rings])
            except DegenerateGeometryError:
                nearest = min(chosen, key=lambda m: (m.range_m, m.anchor_id))
                init = one_shot_fix(state.heading, nearest, anchors[nearest.anchor_id])
        fix = solve_fix(rings, init)
        return FixResult(
            fix.position,
            fix.residual_rms_m,
            tuple(m.anchor_id for m in chosen),
            Method.MULTILATERATION,
            fix.condition_ok,
            fix.iterations,
        )

    if chosen:
        nearest = min(chosen, key=lambda m: (m.range_m, m.anchor_id))
        est = one_shot_fix(state.heading, nearest, anchors[nearest.anchor_id])
        if prev is not None:
            b = config.one_shot_blend
            est = (b * est[0] + (1 - b) * prev.position[0], b * est[1] + (1 - b) * prev.position[1])
        return FixResult(est, 0.0, (nearest.anchor_id,), Method.ONE_SHOT)

    if prev is None:
        raise NoFixError("no anchors visible and no previous fix")
    return FixResult(prev.position, 0.0, (), Method.DEAD_RECKONED)


@dataclass(frozen=True)
class PoseRecord:
    truth: Pose
    fix: FixResult
    n_visible: int


def run_trajectory(
    scenario: Scenario,
    policy: SelectionPolicy = DEFAULT_POLICY,
    heading_config: HeadingConfig = HeadingConfig(),
    config: Optional[MultishotConfig] = None,
) -> List[PoseRecord]:
    """Closed-loop simulation of one walk; returns truth/fix pairs after indoor activation.

    The detector watches the sensor stream and the localizer starts at the
    first WENT_INDOOR event (and pauses after WENT_OUTDOOR). Poses before the
    first usable estimate exists are skipped.
    """
    if config is None:
        noise = scenario.noise
        config = MultishotConfig(prior_sigma_m=noise.range_sigma_los_m, prior_sigma_per_m=noise.range_sigma_per_m)
    truth = generate_trajectory(scenario)
    sensors = synthesize_sensor_stream(
        scenario, truth, (scenario.indoor_start_s, scenario.indoor_end_s), scenario.seed
    )
    walls = _walls_array(scenario.walls)
    anchors = scenario.anchor_map()
    history = RangeHistory()
    det = DetectorState()
    active = False
    heading: Optional[HeadingEstimate] = None
    previous: Optional[FixResult] = None
    out: List[PoseRecord] = []
    W = heading_config.window

    for i, (pose, sample) in enumerate(zip(truth, sensors)):
        window = sensors[max(0, i - W + 1) : i + 1]
        heading = initial_heading(window) if heading is None else fuse_heading(heading, window, heading_config)
        det, event = detector_step(det, sample, scenario.detector)
        if event is Event.WENT_INDOOR:
            active = True
        elif event is Event.WENT_OUTDOOR:
            active = False
        if not active:
            continue

        meas = synthesize_measurements(pose, scenario, i, walls)
        rss = rss_proxy(pose, scenario, walls) if policy.kind is SelectionKind.K_STRONGEST else None
        try:
            fix = multishot_step(MultishotState(previous, heading), meas, anchors, policy, history, rss, config)
        except NoFixError:
            continue
        previous = fix
        out.append(PoseRecord(pose, fix, len(meas)))
    return out
