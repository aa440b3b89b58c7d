"""Artifact rejection for ocular events, plus a velocity-threshold detector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import TooFewSamples
from .ingest import EventKind, OcularEvent, Samples


@dataclass(frozen=True)
class EventThresholds:
    """Allowed duration band (ms) per event kind. Boundary values are kept."""

    fixation_min_ms: float = 60.0
    fixation_max_ms: float = 5000.0
    blink_min_ms: float = 60.0
    blink_max_ms: float = 700.0
    saccade_min_ms: float = 15.0
    saccade_max_ms: float = 400.0

    def __post_init__(self):
        for kind in ("fixation", "blink", "saccade"):
            lo = getattr(self, f"{kind}_min_ms")
            hi = getattr(self, f"{kind}_max_ms")
            if not (0 < lo < hi):
                raise ValueError(f"{kind} thresholds need 0 < min < max, got {lo}, {hi}")

    def band(self, kind: EventKind) -> tuple[float, float]:
        name = kind.value.lower()
        return getattr(self, f"{name}_min_ms"), getattr(self, f"{name}_max_ms")


def filter_events(events: Iterable[OcularEvent], th: EventThresholds = EventThresholds()) -> list[OcularEvent]:
    """Drop events shorter than the kind's minimum or longer than its maximum.

    Order is preserved. An event lasting exactly a threshold survives.
    """
    bands = {kind: th.band(kind) for kind in EventKind}
    out = []
    for ev in events:
        lo, hi = bands[ev.kind]
        d = ev.duration_ms
        if lo <= d <= hi:
            out.append(ev)
    return out


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, stop) index pairs of consecutive True runs."""
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


def detect_events_ivt(
    samples: Samples,
    velocity_threshold_deg_s: float = 30.0,
    blink_gap_ms: float = 75.0,
    sample_period_ms: float | None = None,
) -> list[OcularEvent]:
    """Segment raw gaze into fixations, saccades and blinks (I-VT).

    Each sample ``i`` stands for the interval ``[t_i, t_i + dt)``. Its velocity is
    the displacement from the previous valid sample divided by the elapsed time.
    Runs of samples above the threshold become saccades whose amplitude is the
    distance between the last slow position before the run and the last fast
    position in it. Runs of invalid samples lasting ``blink_gap_ms`` or more
    become blinks; shorter invalid runs just split the surrounding segment.
    """
    t = samples.t_ms
    valid = samples.valid & np.isfinite(samples.x_deg) & np.isfinite(samples.y_deg)
    if int(valid.sum()) < 2:
        raise TooFewSamples("I-VT needs at least two valid samples")
    dt = sample_period_ms if sample_period_ms is not None else samples.sample_period_ms
    ends = np.empty_like(t)
    ends[:-1] = t[1:]
    ends[-1] = t[-1] + dt

    events: list[tuple[float, OcularEvent]] = []
    for lo, hi in _runs(~valid):
        duration = ends[hi] - t[lo]
        if duration >= blink_gap_ms:
            events.append((t[lo], OcularEvent(EventKind.BLINK, float(t[lo]), float(ends[hi]))))

    for lo, hi in _runs(valid):
        idx = np.arange(lo, hi + 1)
        x = samples.x_deg[idx]
        y = samples.y_deg[idx]
        tt = t[idx]
        speed = np.zeros(idx.size)
        if idx.size > 1:
            speed[1:] = np.hypot(np.diff(x), np.diff(y)) / (np.diff(tt) / 1000.0)
            speed[0] = speed[1]
        fast = speed > velocity_threshold_deg_s
        for a, b in _runs(fast):
            origin = a - 1 if a > 0 else a
            amp = float(np.hypot(x[b] - x[origin], y[b] - y[origin]))
            start, end = float(tt[a]), float(ends[idx[b]])
            if end > start:
                events.append((start, OcularEvent(EventKind.SACCADE, start, end, amp)))
        for a, b in _runs(~fast):
            start, end = float(tt[a]), float(ends[idx[b]])
            if end > start:
                events.append((start, OcularEvent(EventKind.FIXATION, start, end)))

    events.sort(key=lambda item: item[0])
    return [ev for _, ev in events]
