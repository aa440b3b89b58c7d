"""Seeded generator of synthetic CIT recordings.

Effects are injected into the raw event stream and pupil trace (never into
features) so that every preprocessing step is exercised downstream.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import InvalidSpec
from .events import EventThresholds
from .ingest import EVENT_COLUMNS, SAMPLE_COLUMNS, TRIAL_COLUMNS, DatasetId, Label

AOI_HALF_WIDTH_DEG = 4.0
AOI_HALF_HEIGHT_DEG = 5.0


@dataclass(frozen=True)
class ConditionEffect:
    """Additive shifts applied to one condition's generating distributions."""

    blink_rate: float = 0.0
    fixation_duration_ms: float = 0.0
    saccade_count: float = 0.0
    saccade_amplitude_deg: float = 0.0
    pupil_peak: float = 0.0
    pupil_latency_ms: float = 0.0
    # multiplies the base standard deviations of this condition
    sd_scale: float = 1.0


@dataclass(frozen=True)
class EffectSpec:
    dataset_id: str = DatasetId.NEON.value
    sample_rate_hz: int = 200
    trial_ms: float = 5000.0
    pre_onset_ms: float = 300.0
    inter_trial_ms: float = 200.0

    blink_rate: float = 1.5
    blink_duration_ms: float = 180.0
    blink_duration_sd: float = 40.0
    fixation_duration_ms: float = 320.0
    fixation_duration_sd: float = 90.0
    saccade_count: float = 8.0
    saccade_duration_ms: float = 40.0
    saccade_duration_sd: float = 8.0
    saccade_amplitude_deg: float = 3.0
    saccade_amplitude_sd: float = 0.8

    pupil_baseline: float = 1000.0
    pupil_peak: float = 20.0
    pupil_peak_sd: float = 4.0
    pupil_latency_ms: float = 900.0
    pupil_latency_sd: float = 100.0
    pupil_width_ms: float = 400.0
    pupil_sample_sd: float = 1.5

    effects: Mapping[str, ConditionEffect] = field(default_factory=dict)
    # relative spread of per-participant offsets on the base parameters
    participant_sd: float = 0.0
    # scales trial-level pupil variability (peak, latency, sample noise); 0 = deterministic pupil
    noise: float = 1.0
    off_card_rate: float = 0.0
    respect_thresholds: bool = True

    def validate(self) -> None:
        if self.dataset_id not in {d.value for d in DatasetId}:
            raise InvalidSpec(f"unknown dataset_id {self.dataset_id!r}")
        if self.sample_rate_hz <= 0 or self.trial_ms <= 0 or self.pre_onset_ms < 50:
            raise InvalidSpec("sample rate and trial length must be positive; pre-onset span >= 50 ms")
        rates = (self.blink_rate, self.saccade_count, self.fixation_duration_ms, self.saccade_duration_ms,
                 self.blink_duration_ms, self.saccade_amplitude_deg)
        sds = (self.blink_duration_sd, self.fixation_duration_sd, self.saccade_duration_sd,
               self.saccade_amplitude_sd, self.pupil_peak_sd, self.pupil_latency_sd, self.pupil_sample_sd,
               self.participant_sd, self.noise)
        if min(rates) < 0 or min(sds) < 0 or self.pupil_width_ms <= 0 or self.pupil_baseline <= 0:
            raise InvalidSpec("rates, durations and variances must be non-negative")
        if not 0.0 <= self.off_card_rate <= 1.0:
            raise InvalidSpec("off_card_rate must lie in [0, 1]")
        for key, eff in self.effects.items():
            if key not in {l.value for l in Label}:
                raise InvalidSpec(f"effect for unknown condition {key!r}")
            if eff.sd_scale < 0:
                raise InvalidSpec("sd_scale must be non-negative")

    def effect(self, label: Label) -> ConditionEffect:
        return self.effects.get(label.value, ConditionEffect())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effects"] = {k: asdict(v) for k, v in sorted(self.effects.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EffectSpec":
        d = dict(d)
        d["effects"] = {k: ConditionEffect(**v) for k, v in d.get("effects", {}).items()}
        return cls(**d)


def null_spec(**overrides) -> EffectSpec:
    """No condition differs from any other."""
    return replace(EffectSpec(), **overrides)


def planted_spec(**overrides) -> EffectSpec:
    """Concealing trials carry fewer saccades and a larger pupil dilation."""
    effects = {
        Label.CONCEALING.value: ConditionEffect(saccade_count=-4.0, pupil_peak=10.0),
        Label.FAKING.value: ConditionEffect(saccade_count=-2.0, pupil_peak=5.0),
    }
    base = dict(effects=effects, participant_sd=0.1)
    base.update(overrides)
    return replace(EffectSpec(), **base)


PRESETS = {"null": null_spec, "planted": planted_spec}


def _quantize(x: float, dt: float) -> float:
    return float(max(dt, np.round(x / dt) * dt))


def _draw_duration(rng, mean, sd, band, dt, respect):
    d = rng.normal(mean, sd) if sd > 0 else mean
    if respect and band is not None:
        d = min(max(d, band[0]), band[1])
    d = _quantize(max(d, dt), dt)
    if respect and band is not None:
        # quantising can step outside the band; pull back onto the grid inside it
        while d > band[1]:
            d -= dt
        while d < band[0]:
            d += dt
    return d


class _Participant:
    def __init__(self, spec: EffectSpec, rng: np.random.Generator):
        s = spec.participant_sd
        self.saccade_count = spec.saccade_count * (1 + s * rng.normal())
        self.fixation_duration_ms = spec.fixation_duration_ms * (1 + s * rng.normal())
        self.saccade_amplitude_deg = spec.saccade_amplitude_deg * (1 + s * rng.normal())
        self.blink_rate = spec.blink_rate * (1 + s * rng.normal())
        self.pupil_baseline = spec.pupil_baseline * (1 + s * rng.normal())
        self.pupil_peak = spec.pupil_peak * (1 + s * rng.normal())


def _trial(spec: EffectSpec, person: _Participant, label: Label, onset: float, rng: np.random.Generator):
    """Events (absolute times) and the per-sample signal of one trial segment."""
    eff = spec.effect(label)
    sdk = eff.sd_scale
    dt = 1000.0 / spec.sample_rate_hz
    th = EventThresholds()
    respect = spec.respect_thresholds

    n_sac = int(rng.poisson(max(person.saccade_count + eff.saccade_count, 0.0)))
    n_blink = int(rng.poisson(max(person.blink_rate + eff.blink_rate, 0.0)))
    # blinks follow randomly chosen fixations
    n_fix = n_sac + 1
    blink_after = set(rng.choice(n_fix, size=min(n_blink, n_fix), replace=False).tolist()) if n_blink else set()

    events = []
    x, y = rng.uniform(-1, 1), rng.uniform(-1, 1)
    t = onset
    end_of_card = onset + spec.trial_ms
    for j in range(n_fix):
        dur = _draw_duration(rng, person.fixation_duration_ms + eff.fixation_duration_ms,
                             spec.fixation_duration_sd * sdk, (th.fixation_min_ms, th.fixation_max_ms), dt, respect)
        off_card = spec.off_card_rate > 0 and rng.random() < spec.off_card_rate
        events.append(("Fixation", t, t + dur, None, x, y, x, y, off_card))
        t += dur
        if j in blink_after:
            bd = _draw_duration(rng, spec.blink_duration_ms, spec.blink_duration_sd * sdk,
                                (th.blink_min_ms, th.blink_max_ms), dt, respect)
            events.append(("Blink", t, t + bd, None, x, y, x, y, False))
            t += bd
        if j < n_sac:
            sd = _draw_duration(rng, spec.saccade_duration_ms, spec.saccade_duration_sd * sdk,
                                (th.saccade_min_ms, th.saccade_max_ms), dt, respect)
            amp = max(0.1, rng.normal(person.saccade_amplitude_deg + eff.saccade_amplitude_deg,
                                      spec.saccade_amplitude_sd * sdk))
            angle = rng.uniform(0, 2 * np.pi)
            nx, ny = x + amp * np.cos(angle), y + amp * np.sin(angle)
            # reflect into the card's area of interest
            if abs(nx) > AOI_HALF_WIDTH_DEG:
                nx = x - amp * np.cos(angle)
            if abs(ny) > AOI_HALF_HEIGHT_DEG:
                ny = y - amp * np.sin(angle)
            nx = float(np.clip(nx, -AOI_HALF_WIDTH_DEG, AOI_HALF_WIDTH_DEG))
            ny = float(np.clip(ny, -AOI_HALF_HEIGHT_DEG, AOI_HALF_HEIGHT_DEG))
            amp = float(np.hypot(nx - x, ny - y))
            if amp > 0:
                events.append(("Saccade", t, t + sd, amp, x, y, nx, ny, False))
            t += sd
            x, y = nx, ny
    events = [e for e in events if e[2] <= end_of_card]

    noise = spec.noise
    peak = person.pupil_peak + eff.pupil_peak + noise * spec.pupil_peak_sd * sdk * rng.normal()
    latency = spec.pupil_latency_ms + eff.pupil_latency_ms + noise * spec.pupil_latency_sd * sdk * rng.normal()
    return events, peak, latency


def generate(spec: EffectSpec, n_participants: int, trials_per_condition: int, seed: int = 0):
    """Build the three ingest tables. Returns (samples, events, trials) DataFrames."""
    spec.validate()
    if n_participants < 5:
        raise InvalidSpec("need at least 5 participants")
    if trials_per_condition < 1:
        raise InvalidSpec("need at least one trial per condition")
    dt = 1000.0 / spec.sample_rate_hz
    seg_ms = spec.pre_onset_ms + spec.trial_ms + spec.inter_trial_ms
    n_seg = int(round(seg_ms / dt))
    labels = [Label.REVEALING, Label.CONCEALING, Label.FAKING]

    sample_blocks, event_rows, trial_rows = [], [], []
    children = np.random.SeedSequence(seed).spawn(n_participants)
    for p in range(n_participants):
        rng = np.random.default_rng(children[p])
        pid = f"P{p + 1:03d}"
        person = _Participant(spec, rng)
        conds = [l for l in labels for _ in range(trials_per_condition)]
        order = rng.permutation(len(conds))
        for k, ci in enumerate(order):
            label = conds[ci]
            seg_start = k * seg_ms
            onset = seg_start + spec.pre_onset_ms
            offset = onset + spec.trial_ms
            events, peak, latency = _trial(spec, person, label, onset, rng)

            t = seg_start + np.arange(n_seg) * dt
            x = np.zeros(n_seg)
            y = np.zeros(n_seg)
            on_card = np.zeros(n_seg, dtype=bool)
            valid = np.ones(n_seg, dtype=bool)
            card = (t >= onset) & (t <= offset)
            if events:
                x[t >= onset] = events[-1][6]
                y[t >= onset] = events[-1][7]
            on_card[card] = True
            for kind, a, b, amp, x0, y0, x1, y1, off in reversed(events):
                sel = (t >= a) & (t < b)
                if kind == "Saccade":
                    frac = (t[sel] - a) / (b - a)
                    x[sel] = x0 + (x1 - x0) * frac
                    y[sel] = y0 + (y1 - y0) * frac
                else:
                    x[sel] = x0
                    y[sel] = y0
                if kind == "Blink":
                    valid[sel] = False
                if off:
                    on_card[sel] = False
            rel = t - onset
            dilation = np.where(rel > 0, peak * np.exp(-0.5 * ((rel - latency) / spec.pupil_width_ms) ** 2), 0.0)
            pupil = person.pupil_baseline + dilation
            if spec.noise > 0 and spec.pupil_sample_sd > 0:
                pupil = pupil + spec.noise * spec.pupil_sample_sd * rng.normal(size=n_seg)
            on_card &= valid
            sample_blocks.append(
                pd.DataFrame(
                    {
                        "participant_id": pid,
                        "trial_id": k,
                        "t_ms": t,
                        "x_deg": np.where(valid, x, np.nan),
                        "y_deg": np.where(valid, y, np.nan),
                        "pupil": np.where(valid, pupil, np.nan),
                        "on_card": on_card.astype(int),
                        "valid": valid.astype(int),
                    }
                )
            )
            for kind, a, b, amp, *_ in events:
                event_rows.append((pid, k, kind, a, b, amp))
            trial_rows.append((pid, k, spec.dataset_id, label.value, onset, offset, spec.sample_rate_hz))

    samples = pd.concat(sample_blocks, ignore_index=True)[list(SAMPLE_COLUMNS)]
    events = pd.DataFrame(event_rows, columns=list(EVENT_COLUMNS))
    trials = pd.DataFrame(trial_rows, columns=list(TRIAL_COLUMNS))
    return samples, events, trials


def write_dataset(samples: pd.DataFrame, events: pd.DataFrame, trials: pd.DataFrame, directory, manifest: dict | None = None) -> dict:
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, f"{name}.csv") for name in ("samples", "events", "trials")}
    samples.to_csv(paths["samples"], index=False, na_rep="", lineterminator="\n")
    events.to_csv(paths["events"], index=False, na_rep="", lineterminator="\n")
    trials.to_csv(paths["trials"], index=False, na_rep="", lineterminator="\n")
    if manifest is not None:
        paths["manifest"] = os.path.join(directory, "manifest.json")
        with open(paths["manifest"], "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return paths


def generate_to(directory, spec: EffectSpec, n_participants: int, trials_per_condition: int, seed: int = 0) -> dict:
    """Generate and write samples.csv, events.csv, trials.csv and manifest.json."""
    frames = generate(spec, n_participants, trials_per_condition, seed)
    manifest = {
        "generator": "citeye.synth",
        "seed": seed,
        "n_participants": n_participants,
        "trials_per_condition": trials_per_condition,
        "spec": spec.to_dict(),
    }
    return write_dataset(*frames, directory, manifest)
