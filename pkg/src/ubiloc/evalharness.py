"""
Error metrics, empirical CDFs, parameter sweeps and their CSV/JSON outputs.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ubiloc.geometry import euclidean_distance
from ubiloc.multilateration import PoseRecord, run_trajectory
from ubiloc.selector import DEFAULT_POLICY, SelectionKind, SelectionPolicy
from ubiloc.simenv import Scenario

THREADS_ENV = "UBILOC_THREADS"


class Axis(enum.Enum):
    SELECTION = "selection"
    K = "k"
    DENSITY = "density"
    SIGMA = "sigma"

    @classmethod
    def parse(cls, name: str) -> "Axis":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown sweep axis {name!r}; choose from {[a.value for a in cls]}") from None


@dataclass(frozen=True)
class ErrorSeries:
    errors: np.ndarray
    timestamps: np.ndarray
    methods: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.errors)


def _pair(item):
    if isinstance(item, PoseRecord):
        return item.truth, item.fix
    return item


def compute_errors(paired: Sequence) -> ErrorSeries:
    """Per-pose distance between truth and estimate.

    Accepts :class:`PoseRecord` items or ``(truth_pose, fix)`` tuples.
    """
    if len(paired) == 0:
        raise ValueError("compute_errors needs at least one pair")
    errors, times, methods = [], [], []
    for item in paired:
        truth, fix = _pair(item)
        errors.append(euclidean_distance(truth.position, fix.position))
        times.append(truth.timestamp)
        methods.append(fix.method.value)
    return ErrorSeries(np.asarray(errors), np.asarray(times), tuple(methods))


def _values(series) -> np.ndarray:
    v = series.errors if isinstance(series, ErrorSeries) else np.asarray(series, dtype=float)
    if v.size == 0:
        raise ValueError("empty error series")
    return v


def cdf(series) -> List[Tuple[float, float]]:
    """Empirical CDF as (error, i/n) points, errors ascending."""
    v = np.sort(_values(series))
    n = v.size
    return [(float(e), (i + 1) / n) for i, e in enumerate(v)]


def read_cdf(points: Sequence[Tuple[float, float]], fraction: float) -> float:
    """Error at which the step CDF reaches ``fraction``.

    Where the CDF sits exactly at ``fraction`` over a flat stretch, the
    midpoint of that stretch is returned (so the 0.5 reading is the usual
    median for even counts).
    """
    n = len(points)
    pos = fraction * n
    k = int(round(pos))
    if abs(pos - k) < 1e-9 and 0 < k < n:
        return 0.5 * (points[k - 1][0] + points[k][0])
    idx = min(n - 1, max(0, int(np.ceil(pos - 1e-9)) - 1))
    return points[idx][0]


def percentile(series, q: float) -> float:
    """Linearly interpolated empirical quantile, ``q`` in [0, 1]."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must be in [0, 1], got {q}")
    return float(np.quantile(_values(series), q))


def summarize(series) -> Dict[str, float]:
    v = _values(series)
    return {
        "median_m": percentile(v, 0.5),
        "p90_m": percentile(v, 0.9),
        "mean_m": float(v.mean()),
        "n_poses": int(v.size),
    }


# --- sweeps --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    axis_value: Any
    median_m: float
    p90_m: float
    mean_m: float


def _cell(scenario: Scenario, axis: Axis, value, policy: SelectionPolicy) -> Tuple[Scenario, SelectionPolicy]:
    if axis is Axis.SELECTION:
        return scenario, SelectionPolicy(SelectionKind.parse(value), policy.k)
    if axis is Axis.K:
        return scenario, SelectionPolicy(policy.kind, int(value))
    if axis is Axis.DENSITY:
        return scenario.with_anchor_prefix(int(value)), policy
    sigma = float(value)
    # NLOS noise may not drop below LOS noise
    nlos = max(scenario.noise.range_sigma_nlos_m, sigma)
    return scenario.with_noise(range_sigma_los_m=sigma, range_sigma_nlos_m=nlos), policy


def check_sweep_values(scenario: Scenario, axis: Axis, values: Sequence) -> List:
    """Normalize sweep values; raises ValueError before anything runs."""
    if len(values) == 0:
        raise ValueError("sweep needs at least one value")
    out: List = []
    for v in values:
        if axis is Axis.SELECTION:
            out.append(SelectionKind.parse(str(v)).value)
            continue
        if axis in (Axis.K, Axis.DENSITY):
            try:
                iv = int(v)
            except (TypeError, ValueError):
                raise ValueError(f"{axis.value} values must be integers, got {v!r}") from None
            if iv != float(v) or iv < 1:
                raise ValueError(f"{axis.value} values must be positive integers, got {v!r}")
            if axis is Axis.DENSITY and iv > len(scenario.anchors):
                raise ValueError(f"density {iv} exceeds the scenario's {len(scenario.anchors)} anchors")
            out.append(iv)
            continue
        fv = float(v)
        if not (np.isfinite(fv) and fv >= 0):
            raise ValueError(f"sigma values must be finite and >= 0, got {v!r}")
        out.append(fv)
    return out


def _run_cell(scenario: Scenario, policy: SelectionPolicy) -> np.ndarray:
    records = run_trajectory(scenario, policy)
    if not records:
        return np.empty(0)
    return compute_errors(records).errors


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def sweep(
    scenario: Scenario,
    axis: Axis | str,
    values: Sequence,
    replications: int = 1,
    policy: SelectionPolicy = DEFAULT_POLICY,
    workers: Optional[int] = None,
) -> List[SweepRow]:
    """Run every (value, replication) cell and aggregate errors per value.

    Replication r uses seed ``scenario.seed + r``. Errors from all
    replications of a value are pooled before taking statistics, so the
    table does not depend on replication order or on ``workers``.
    """
    axis = Axis.parse(axis) if isinstance(axis, str) else axis
    if replications < 1:
        raise ValueError("replications must be >= 1")
    values = check_sweep_values(scenario, axis, values)
    cells = []
    for v in values:
        sc, pol = _cell(scenario, axis, v, policy)
        for r in range(replications):
            cells.append((sc.with_seed((scenario.seed + r) % 2**64), pol))

    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1:
        results = [_run_cell(sc, pol) for sc, pol in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, [c[0] for c in cells], [c[1] for c in cells]))

    rows = []
    for i, v in enumerate(values):
        chunk = [e for e in results[i * replications : (i + 1) * replications] if e.size]
        if not chunk:
            rows.append(SweepRow(v, float("nan"), float("nan"), float("nan")))
            continue
        pooled = np.sort(np.concatenate(chunk))
        rows.append(SweepRow(v, percentile(pooled, 0.5), percentile(pooled, 0.9), float(pooled.mean())))
    return rows


# --- output files ----------------------------------------------------------------


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def pose_csv(records: Sequence[PoseRecord]) -> str:
    rows = []
    for rec in records:
        t, f = rec.truth, rec.fix
        rows.append(
            (
                repr(t.timestamp),
                repr(t.position[0]),
                repr(t.position[1]),
                repr(f.position[0]),
                repr(f.position[1]),
                repr(euclidean_distance(t.position, f.position)),
                f.method.value,
                len(f.anchors_used),
            )
        )
    return _csv_text(("t", "truth_x", "truth_y", "est_x", "est_y", "error_m", "method", "n_anchors"), rows)


def cdf_csv(points: Sequence[Tuple[float, float]]) -> str:
    return _csv_text(("error_m", "fraction"), [(repr(e), repr(f)) for e, f in points])


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    return _csv_text(
        ("axis_value", "median_m", "p90_m", "mean_m"),
        [(r.axis_value, repr(r.median_m), repr(r.p90_m), repr(r.mean_m)) for r in rows],
    )


def summary_json(series: ErrorSeries, scenario: Scenario, policy: SelectionPolicy) -> str:
    doc = summarize(series)
    doc.update({"scenario": scenario.name, "policy": policy.name, "k": policy.k, "seed": scenario.seed})
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
