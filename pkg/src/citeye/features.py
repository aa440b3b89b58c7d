"""The 60-column per-trial feature table and its three feature groups."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .events import EventThresholds, detect_events_ivt, filter_events
from .errors import MissingColumn, TooFewSamples
from .ingest import EventKind, TrialRecord
from .pupil import PupilConfig, bin_labels, preprocess_pupil

EYE_FEATURES = (
    "fixation_number",
    "fixation_duration",
    "saccade_number",
    "saccade_duration",
    "saccade_amplitude",
    "blink_number",
    "blink_duration",
)
PUPIL_SUMMARY = ("pupil_mean", "pupil_max", "pupil_min")
PUPIL_WINDOWS = tuple(f"pupil_window_{k}" for k in bin_labels())
PUPIL_FEATURES = PUPIL_SUMMARY + PUPIL_WINDOWS
FEATURE_NAMES = EYE_FEATURES + PUPIL_FEATURES
ID_COLUMNS = ("participant_id", "trial_id", "label")

assert len(FEATURE_NAMES) == 60


class FeatureGroup(str, enum.Enum):
    ALL = "all"
    EYE_MOVEMENT = "eye"
    PUPIL = "pupil"

    @property
    def columns(self) -> tuple[str, ...]:
        return {
            FeatureGroup.ALL: FEATURE_NAMES,
            FeatureGroup.EYE_MOVEMENT: EYE_FEATURES,
            FeatureGroup.PUPIL: PUPIL_FEATURES,
        }[self]

    @classmethod
    def parse(cls, value) -> "FeatureGroup":
        if isinstance(value, cls):
            return value
        aliases = {"eyemovement": "eye", "eye_movement": "eye", "eye-movement": "eye"}
        key = str(value).strip().lower()
        return cls(aliases.get(key, key))


@dataclass
class FeatureVector:
    participant_id: str
    trial_id: int
    label: str
    values: np.ndarray = field(default_factory=lambda: np.full(len(FEATURE_NAMES), np.nan))

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


@dataclass(frozen=True)
class FeatureConfig:
    thresholds: EventThresholds = EventThresholds()
    pupil: PupilConfig = PupilConfig()
    duration_mode: str = "mean"
    # fall back to I-VT detection for trials that arrive without any event
    detect_missing_events: bool = True
    ivt_velocity_deg_s: float = 30.0
    ivt_blink_gap_ms: float = 75.0

    def __post_init__(self):
        if self.duration_mode not in ("mean", "sum"):
            raise ValueError(f"duration_mode must be mean or sum, got {self.duration_mode!r}")


def _summary(values: list[float], mode: str) -> float:
    if not values:
        return 0.0
    return float(np.sum(values) if mode == "sum" else np.mean(values))


def extract_features(trial: TrialRecord, pupil_bins: np.ndarray, duration_mode: str = "mean") -> FeatureVector:
    """Collapse one preprocessed trial into its feature vector.

    Event features count and average the events starting inside the card
    window (at or after onset). Means over zero events are 0. Pupil summaries
    come from the non-missing bins; if every bin is missing they are NaN.
    """
    on = trial.card_onset_ms
    by_kind = {k: [] for k in EventKind}
    for ev in trial.events:
        if ev.start_ms >= on:
            by_kind[ev.kind].append(ev)
    fix = by_kind[EventKind.FIXATION]
    sac = by_kind[EventKind.SACCADE]
    blk = by_kind[EventKind.BLINK]
    # sorted before reduction so event input order cannot change the float sums
    eye = [
        float(len(fix)),
        _summary(sorted(e.duration_ms for e in fix), duration_mode),
        float(len(sac)),
        _summary(sorted(e.duration_ms for e in sac), duration_mode),
        _summary(sorted(e.amplitude_deg for e in sac), "mean"),
        float(len(blk)),
        _summary(sorted(e.duration_ms for e in blk), duration_mode),
    ]
    bins = np.asarray(pupil_bins, dtype=float)
    finite = bins[np.isfinite(bins)]
    if finite.size:
        summary = [float(finite.mean()), float(finite.max()), float(finite.min())]
    else:
        summary = [np.nan, np.nan, np.nan]
    values = np.concatenate([eye, summary, bins])
    return FeatureVector(trial.participant_id, trial.trial_id, trial.label.value, values)


def prepare_events(trial: TrialRecord, config: FeatureConfig = FeatureConfig()) -> TrialRecord:
    """Apply duration thresholds to the trial's events (detecting them first if absent)."""
    events = list(trial.events)
    if not events and config.detect_missing_events:
        try:
            events = detect_events_ivt(trial.samples, config.ivt_velocity_deg_s, config.ivt_blink_gap_ms)
        except TooFewSamples:
            events = []
    filtered = tuple(filter_events(events, config.thresholds))
    return TrialRecord(
        dataset_id=trial.dataset_id,
        participant_id=trial.participant_id,
        trial_id=trial.trial_id,
        label=trial.label,
        card_onset_ms=trial.card_onset_ms,
        card_offset_ms=trial.card_offset_ms,
        samples=trial.samples,
        events=filtered,
        sample_rate_hz=trial.sample_rate_hz,
    )


def featurize(trials: Sequence[TrialRecord], config: FeatureConfig = FeatureConfig()) -> pd.DataFrame:
    """Events, then pupil chain, then extraction, for a whole session."""
    prepared = [prepare_events(tr, config) for tr in trials]
    bins = preprocess_pupil(prepared, config.pupil)
    vectors = [extract_features(tr, bins[i], config.duration_mode) for i, tr in enumerate(prepared)]
    return to_frame(vectors)


def to_frame(vectors: Sequence[FeatureVector]) -> pd.DataFrame:
    ids = pd.DataFrame(
        {
            "participant_id": [v.participant_id for v in vectors],
            "trial_id": np.array([v.trial_id for v in vectors], dtype=np.int64),
            "label": [v.label for v in vectors],
        }
    )
    values = np.vstack([v.values for v in vectors]) if vectors else np.zeros((0, len(FEATURE_NAMES)))
    return pd.concat([ids, pd.DataFrame(values, columns=list(FEATURE_NAMES))], axis=1)


def select_group(frame: pd.DataFrame, group) -> pd.DataFrame:
    """Project onto a group's columns in canonical order, keeping id columns."""
    group = FeatureGroup.parse(group)
    ids = [c for c in ID_COLUMNS if c in frame.columns]
    return frame[ids + list(group.columns)]


def write_features_csv(frame: pd.DataFrame, path) -> None:
    """Empty cells mark missing values; floats are written round-trip exact."""
    frame.to_csv(path, index=False, na_rep="", float_format=None, lineterminator="\n")


def read_features_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(
        path, dtype={"participant_id": str, "label": str}, keep_default_na=False, na_values=[""],
        float_precision="round_trip",
    )
    missing = [c for c in ID_COLUMNS + FEATURE_NAMES if c not in frame.columns]
    if missing:
        raise MissingColumn(f"features file lacks columns {missing[:3]}...", path=path, line=1)
    frame[list(FEATURE_NAMES)] = frame[list(FEATURE_NAMES)].astype(float)
    return frame
