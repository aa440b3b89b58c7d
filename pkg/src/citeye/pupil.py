"""Pupil preprocessing: card-locked selection, blink interpolation, baseline
correction, 50 ms binning and z-score outlier removal.

The steps run in that order. Missing values are NaN throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBaseline, InsufficientSupport
from .ingest import BASELINE_MS, DatasetId, EventKind, TrialRecord

WINDOW_MS = 2500.0
BIN_MS = 50.0
N_BINS = 50


@dataclass(eq=False)
class PupilSeries:
    """Pupil trace with times relative to card onset. NaN marks a missing sample."""

    t_ms: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def missing(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    def __len__(self):
        return self.t_ms.size


@dataclass(eq=False)
class PupilBins:
    """Fifty 50 ms bin means over (0, 2500] ms; NaN for an empty bin."""

    values: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    @property
    def labels(self) -> np.ndarray:
        return bin_labels(self.values.size)


@dataclass(frozen=True)
class BaselineWindow:
    start_ms: float
    end_ms: float
    mean_pupil: float


@dataclass(frozen=True)
class PupilConfig:
    """``interpolate=None`` means: on for EyelinkLike recordings, off otherwise."""

    interpolate: bool | None = None
    baseline_mode: str = "subtractive"
    z_threshold: float = 3.0

    def __post_init__(self):
        if self.baseline_mode not in ("subtractive", "divisive"):
            raise ValueError(f"baseline_mode must be subtractive or divisive, got {self.baseline_mode!r}")
        if not self.z_threshold > 0:
            raise ValueError("z_threshold must be positive")

    def interpolate_for(self, dataset_id: DatasetId) -> bool:
        if self.interpolate is None:
            return dataset_id == DatasetId.EYELINK
        return self.interpolate


def bin_labels(n_bins: int = N_BINS, width: float = BIN_MS) -> np.ndarray:
    """Bin k (1-based) covers ((k-1)*w, k*w] and is labelled (k-1)*w + 1."""
    return (np.arange(n_bins) * width + 1).astype(int)


def select_on_card(trial: TrialRecord, window_ms: float = WINDOW_MS) -> PupilSeries:
    """Samples in (onset, onset + window]; off-card or invalid samples become NaN."""
    s = trial.samples
    rel = s.t_ms - trial.card_onset_ms
    inside = (rel > 0) & (rel <= window_ms)
    keep = s.on_card & s.valid & np.isfinite(s.pupil)
    values = np.where(keep, s.pupil, np.nan)[inside]
    return PupilSeries(rel[inside], values)


def blink_intervals(trial: TrialRecord) -> list[tuple[float, float]]:
    """Blink (start, end) pairs relative to card onset."""
    on = trial.card_onset_ms
    return [(e.start_ms - on, e.end_ms - on) for e in trial.events if e.kind == EventKind.BLINK]


def _cubic_through(tk: np.ndarray, vk: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the Lagrange cubic through four support points at ``t``."""
    c = tk.mean()
    tk = tk - c
    t = t - c
    out = np.zeros_like(t)
    for j in range(4):
        basis = np.ones_like(t)
        for m in range(4):
            if m != j:
                basis *= (t - tk[m]) / (tk[j] - tk[m])
        out += vk[j] * basis
    return out


def interpolate_blink_gaps(
    series: PupilSeries,
    blinks: Iterable[tuple[float, float]],
    method: str = "cubic",
    strict: bool = False,
) -> PupilSeries:
    """Replace samples inside each blink interval by a cubic through the two
    nearest non-missing samples on either side.

    A gap without two supports on both sides stays missing, or raises
    ``InsufficientSupport`` when ``strict``.
    """
    if method != "cubic":
        raise ValueError(f"unsupported interpolation method {method!r}")
    t = series.t_ms
    values = series.values.copy()
    for start, end in blinks:
        inside = (t >= start) & (t <= end)
        if not inside.any():
            continue
        ok = np.isfinite(series.values) & ~inside
        left = np.flatnonzero(ok & (t < start))[-2:]
        right = np.flatnonzero(ok & (t > end))[:2]
        if left.size < 2 or right.size < 2:
            if strict:
                raise InsufficientSupport(f"blink ({start}, {end}) lacks two supports on each side")
            values[inside] = np.nan
            continue
        support = np.concatenate([left, right])
        values[inside] = _cubic_through(t[support], series.values[support], t[inside])
    return PupilSeries(t.copy(), values)


def baseline_window(trial: TrialRecord, length_ms: float = BASELINE_MS) -> BaselineWindow:
    """Mean pupil over valid samples in [onset - 50 ms, onset)."""
    on = trial.card_onset_ms
    s = trial.samples
    sel = (s.t_ms >= on - length_ms) & (s.t_ms < on) & s.valid & np.isfinite(s.pupil)
    if not sel.any():
        raise EmptyBaseline(f"trial {trial.participant_id}/{trial.trial_id}: no valid baseline sample")
    return BaselineWindow(on - length_ms, on, float(np.mean(s.pupil[sel])))


def baseline_correct(series: PupilSeries, baseline: BaselineWindow, mode: str = "subtractive") -> PupilSeries:
    if mode == "subtractive":
        values = series.values - baseline.mean_pupil
    elif mode == "divisive":
        values = series.values / baseline.mean_pupil
    else:
        raise ValueError(f"unknown baseline mode {mode!r}")
    return PupilSeries(series.t_ms.copy(), values)


def bin_50ms(series: PupilSeries, n_bins: int = N_BINS, width: float = BIN_MS) -> PupilBins:
    t = series.t_ms
    k = np.ceil(t / width).astype(np.int64) - 1
    ok = np.isfinite(series.values) & (t > 0) & (k < n_bins)
    sums = np.bincount(k[ok], weights=series.values[ok], minlength=n_bins)
    counts = np.bincount(k[ok], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return PupilBins(means[:n_bins])


def remove_outliers_z(
    bins: np.ndarray, participants: Sequence, threshold: float = 3.0
) -> np.ndarray:
    """Blank entries whose |z| exceeds ``threshold``.

    ``bins`` is (n_trials, n_bins). The standardisation population is one
    participant's trials at one bin position; the population standard
    deviation (ddof=0) is used. Populations with fewer than two values or zero
    spread are left untouched.
    """
    out = np.array(bins, dtype=float, copy=True)
    if not np.isfinite(threshold):
        return out
    participants = np.asarray(participants, dtype=object)
    for pid in dict.fromkeys(participants.tolist()):
        rows = np.flatnonzero(participants == pid)
        block = out[rows]
        finite = np.isfinite(block)
        n = finite.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.nansum(block, axis=0) / np.maximum(n, 1)
            var = np.nansum((block - mean) ** 2, axis=0) / np.maximum(n, 1)
            std = np.sqrt(var)
            z = (block - mean) / std
        usable = (n >= 2) & (std > 0)
        drop = finite & usable[None, :] & (np.abs(z) > threshold)
        block[drop] = np.nan
        out[rows] = block
    return out


def preprocess_trial(trial: TrialRecord, config: PupilConfig = PupilConfig()) -> PupilBins:
    """Per-trial part of the chain (everything except outlier removal)."""
    series = select_on_card(trial)
    if config.interpolate_for(trial.dataset_id):
        series = interpolate_blink_gaps(series, blink_intervals(trial))
    try:
        base = baseline_window(trial)
    except EmptyBaseline:
        return PupilBins(np.full(N_BINS, np.nan))
    series = baseline_correct(series, base, config.baseline_mode)
    return bin_50ms(series)


def preprocess_pupil(trials: Sequence[TrialRecord], config: PupilConfig = PupilConfig()) -> np.ndarray:
    """Full chain over a session: (n_trials, 50) cleaned bin matrix."""
    if not trials:
        return np.zeros((0, N_BINS))
    raw = np.vstack([preprocess_trial(tr, config).values for tr in trials])
    return remove_outliers_z(raw, [tr.participant_id for tr in trials], config.z_threshold)
