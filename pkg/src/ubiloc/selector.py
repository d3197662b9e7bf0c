"""Anchor subset selection heuristics and the per-anchor range history they use."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Tuple

from ubiloc.detection import OrderingError
from ubiloc.geometry import TagMeasurement


class SelectionKind(enum.Enum):
    ALL = "all"
    K_NEAREST = "nearest"
    K_FARTHEST = "farthest"
    K_LEAST_VARIANCE = "least-variance"
    K_STRONGEST = "strongest"

    @classmethod
    def parse(cls, name: str) -> "SelectionKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValueError(f"unknown selection {name!r}; choose from {[k.value for k in cls]}")


class SelectionConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionPolicy:
    kind: SelectionKind = SelectionKind.K_NEAREST
    k: int = 6

    def __post_init__(self) -> None:
        if int(self.k) < 1:
            raise SelectionConfigError(f"k must be >= 1, got {self.k}")

    @property
    def name(self) -> str:
        return self.kind.value


DEFAULT_POLICY = SelectionPolicy()


class RangeHistory:
    """Ring buffer of recent (timestamp, range) readings per anchor.

    Not thread-safe; keep one per simulated device.
    """

    def __init__(self, window: int = 10, expiry_s: float = 10.0, min_samples: int = 3):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.expiry_s = expiry_s
        self.min_samples = min_samples
        self.buffers: Dict[int, Deque[Tuple[float, float]]] = {}
        self.last_timestamp: Optional[float] = None

    def __len__(self) -> int:
        return len(self.buffers)

    def __contains__(self, anchor_id: int) -> bool:
        return anchor_id in self.buffers

    def ranges(self, anchor_id: int) -> List[float]:
        return [r for _, r in self.buffers.get(anchor_id, ())]

    def variance(self, anchor_id: int) -> Optional[float]:
        """Unbiased window variance, or None with fewer than ``min_samples`` readings."""
        values = self.ranges(anchor_id)
        n = len(values)
        if n < max(2, self.min_samples):
            return None
        # Welford keeps the estimate stable for ranges far from zero
        mean = 0.0
        m2 = 0.0
        for i, x in enumerate(values, 1):
            delta = x - mean
            mean += delta / i
            m2 += delta * (x - mean)
        return m2 / (n - 1)

    def noise_sigma(self, anchor_id: int) -> Optional[float]:
        """Ranging noise estimate from second differences of the window.

        Walking makes the raw window variance mostly motion; a second
        difference cancels any locally linear range trend. For iid noise of
        std s, Var(x[i] - 2x[i+1] + x[i+2]) = 6 s^2.
        """
        values = self.ranges(anchor_id)
        if len(values) < max(3, self.min_samples):
            return None
        d2 = [values[i] - 2.0 * values[i + 1] + values[i + 2] for i in range(len(values) - 2)]
        return math.sqrt(sum(v * v for v in d2) / (6.0 * len(d2)))


def update_history(history: RangeHistory, measurements: Sequence[TagMeasurement]) -> RangeHistory:
    """Append one pose's measurements, evict beyond the window, drop stale anchors."""
    if not measurements:
        return history
    t = max(m.timestamp for m in measurements)
    for m in measurements:
        buf = history.buffers.get(m.anchor_id)
        if buf and m.timestamp <= buf[-1][0]:
            raise OrderingError(f"anchor {m.anchor_id}: reading at t={m.timestamp} is not newer than t={buf[-1][0]}")
    for m in measurements:
        buf = history.buffers.setdefault(m.anchor_id, deque(maxlen=history.window))
        buf.append((m.timestamp, m.range_m))
    stale = [aid for aid, buf in history.buffers.items() if t - buf[-1][0] > history.expiry_s]
    for aid in stale:
        del history.buffers[aid]
    history.last_timestamp = t
    return history


def select(
    measurements: Sequence[TagMeasurement],
    history: Optional[RangeHistory],
    policy: SelectionPolicy = DEFAULT_POLICY,
    rss: Optional[Mapping[int, float]] = None,
) -> List[TagMeasurement]:
    """Subset of one pose's measurements chosen by ``policy``, in selection-key order."""
    kind = policy.kind
    if kind is SelectionKind.ALL:
        return sorted(measurements, key=lambda m: m.anchor_id)
    if kind is SelectionKind.K_NEAREST:
        key = lambda m: (m.range_m, m.anchor_id)  # noqa: E731
    elif kind is SelectionKind.K_FARTHEST:
        key = lambda m: (-m.range_m, m.anchor_id)  # noqa: E731
    elif kind is SelectionKind.K_STRONGEST:
        if rss is None:
            raise SelectionConfigError("strongest selection needs per-anchor signal strength")
        missing = [m.anchor_id for m in measurements if m.anchor_id not in rss]
        if missing:
            raise SelectionConfigError(f"no signal strength for anchors {missing}")
        key = lambda m: (-rss[m.anchor_id], m.anchor_id)  # noqa: E731
    else:
        if history is None:
            raise SelectionConfigError("least-variance selection needs a range history")

        def key(m):
            var = history.variance(m.anchor_id)
            if var is None:
                return (1, m.range_m, m.anchor_id)
            return (0, var, m.anchor_id)

    return sorted(measurements, key=key)[: policy.k]
