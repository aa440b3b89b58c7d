"""Loading gaze samples, ocular events and trial metadata from CSV.

Three neutral, UTF-8 CSV files describe a recording session::

    samples.csv  participant_id,trial_id,t_ms,x_deg,y_deg,pupil,on_card,valid
    events.csv   participant_id,trial_id,kind,start_ms,end_ms,amplitude_deg
    trials.csv   participant_id,trial_id,dataset_id,label,card_onset_ms,card_offset_ms,sample_rate_hz

Times are milliseconds since the start of a participant's recording. Trials are
assembled by time window, so the ``trial_id`` column of the sample and event
files is informational apart from the per-trial monotonicity check.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    InputValidationError,
    MissingColumn,
    NonMonotonicTime,
    OverlappingTrials,
    UnknownLabel,
)

SAMPLE_COLUMNS = ("participant_id", "trial_id", "t_ms", "x_deg", "y_deg", "pupil", "on_card", "valid")
EVENT_COLUMNS = ("participant_id", "trial_id", "kind", "start_ms", "end_ms", "amplitude_deg")
TRIAL_COLUMNS = (
    "participant_id",
    "trial_id",
    "dataset_id",
    "label",
    "card_onset_ms",
    "card_offset_ms",
    "sample_rate_hz",
)

# pre-onset span kept with each trial; the pupil baseline lives here
BASELINE_MS = 50.0


class Label(str, enum.Enum):
    REVEALING = "Revealing"
    CONCEALING = "Concealing"
    FAKING = "Faking"


class EventKind(str, enum.Enum):
    FIXATION = "Fixation"
    SACCADE = "Saccade"
    BLINK = "Blink"


class DatasetId(str, enum.Enum):
    EYELINK = "EyelinkLike"
    NEON = "NeonLike"


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class GazeSample:
    t_ms: float
    x_deg: float
    y_deg: float
    pupil: float
    on_card: bool
    valid: bool


@dataclass(frozen=True)
class OcularEvent:
    kind: EventKind
    start_ms: float
    end_ms: float
    amplitude_deg: float | None = None

    def __post_init__(self):
        if not self.end_ms > self.start_ms:
            raise ValueError(f"event end {self.end_ms} must exceed start {self.start_ms}")
        if (self.kind == EventKind.SACCADE) != (self.amplitude_deg is not None):
            raise ValueError("amplitude_deg is required for saccades and forbidden otherwise")
        if self.amplitude_deg is not None and self.amplitude_deg < 0:
            raise ValueError("amplitude_deg must be non-negative")

    @property
    def duration_ms(self) -> float:
        return self.end_ms - self.start_ms


@dataclass(eq=False)
class Samples:
    """Columnar block of gaze samples, ordered by time."""

    t_ms: np.ndarray
    x_deg: np.ndarray
    y_deg: np.ndarray
    pupil: np.ndarray
    on_card: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.t_ms = np.asarray(self.t_ms, dtype=float)
        self.x_deg = np.asarray(self.x_deg, dtype=float)
        self.y_deg = np.asarray(self.y_deg, dtype=float)
        self.pupil = np.asarray(self.pupil, dtype=float)
        self.on_card = np.asarray(self.on_card, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)

    @classmethod
    def empty(cls) -> "Samples":
        z = np.zeros(0)
        return cls(z, z, z, z, z.astype(bool), z.astype(bool))

    @classmethod
    def from_samples(cls, samples: Iterable[GazeSample]) -> "Samples":
        rows = list(samples)
        if not rows:
            return cls.empty()
        cols = list(zip(*((s.t_ms, s.x_deg, s.y_deg, s.pupil, s.on_card, s.valid) for s in rows)))
        return cls(*cols)

    def __len__(self):
        return self.t_ms.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return GazeSample(
                float(self.t_ms[i]),
                float(self.x_deg[i]),
                float(self.y_deg[i]),
                float(self.pupil[i]),
                bool(self.on_card[i]),
                bool(self.valid[i]),
            )
        return Samples(
            self.t_ms[i], self.x_deg[i], self.y_deg[i], self.pupil[i], self.on_card[i], self.valid[i]
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Samples):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, name), getattr(other, name), equal_nan=True)
            for name in ("t_ms", "x_deg", "y_deg", "pupil", "on_card", "valid")
        )

    @property
    def sample_period_ms(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.median(np.diff(self.t_ms)))


@dataclass(eq=False)
class SampleTable(Samples):
    """Samples of a whole session, keyed by participant and trial."""

    participant_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    trial_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    line_no: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    n_discarded: int = 0


@dataclass(frozen=True)
class EventRow:
    participant_id: str
    trial_id: int
    event: OcularEvent
    line_no: int = 0


@dataclass(frozen=True)
class TrialIndexRow:
    participant_id: str
    trial_id: int
    dataset_id: str
    label: str
    card_onset_ms: float
    card_offset_ms: float
    sample_rate_hz: int
    line_no: int = 0


@dataclass(eq=True)
class TrialRecord:
    dataset_id: DatasetId
    participant_id: str
    trial_id: int
    label: Label
    card_onset_ms: float
    card_offset_ms: float
    samples: Samples
    events: tuple[OcularEvent, ...]
    sample_rate_hz: int

    @property
    def window(self) -> tuple[float, float]:
        return self.card_onset_ms - BASELINE_MS, self.card_offset_ms


def _open_csv(path, required: Sequence[str], schema: Mapping[str, str] | None):
    """Return (reader, column index map) after checking the header."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputValidationError(f"cannot open: {exc.strerror}", path=path) from None
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise MissingColumn("file is empty, header row required", path=path, line=1)
    header = [h.strip() for h in header]
    schema = dict(schema or {})
    index = {}
    for name in required:
        col = schema.get(name, name)
        if col not in header:
            fh.close()
            raise MissingColumn(f"missing column {col!r}", path=path, line=1)
        index[name] = header.index(col)
    return fh, reader, index, len(header)


def _to_float(values: list[str]) -> np.ndarray:
    try:
        return np.array(values, dtype=float)
    except ValueError:
        pass
    # per-cell parse keeps correct rounding (pandas' fast parser is off by an ulp at times)
    out = np.empty(len(values))
    for i, v in enumerate(values):
        try:
            out[i] = float(v)
        except ValueError:
            out[i] = np.nan
    return out


def _to_bool(values: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Parsed flags plus a mask of entries that were not recognisable booleans."""
    low = [v.strip().lower() for v in values]
    out = np.array([v in _TRUE for v in low], dtype=bool)
    bad = np.array([v not in _TRUE and v not in _FALSE for v in low], dtype=bool)
    return out, bad


def _to_int(values: list[str]) -> np.ndarray:
    """Integer parse; -1 marks unparseable entries."""
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        try:
            out[i] = int(v)
        except ValueError:
            try:
                f = float(v)
                out[i] = int(f) if f.is_integer() else -1
            except ValueError:
                out[i] = -1
    return out


def load_samples(path, schema: Mapping[str, str] | None = None) -> SampleTable:
    """Read ``samples.csv``.

    Rows whose identifiers or timestamp cannot be parsed (or that have the wrong
    number of fields) are discarded and counted in ``n_discarded``. Rows with a
    non-numeric gaze position or pupil, or a non-positive pupil, are kept with
    ``valid=False`` so that gaps can be interpolated downstream.

    Raises
    ------
    MissingColumn
        Header does not provide every column of ``schema``.
    NonMonotonicTime
        Timestamps within one participant/trial do not strictly increase.
    """
    fh, reader, idx, width = _open_csv(path, SAMPLE_COLUMNS, schema)
    rows, lines = [], []
    discarded = 0
    with fh:
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                discarded += 1
                continue
            rows.append(row)
            lines.append(line_no)

    def column(name):
        j = idx[name]
        return [r[j] for r in rows]

    pid = np.array([v.strip() for v in column("participant_id")], dtype=object)
    tid = _to_int(column("trial_id"))
    t = _to_float(column("t_ms"))
    keep = np.array([bool(p) for p in pid], dtype=bool) & (tid >= 0) & np.isfinite(t) & (t >= 0)
    discarded += int((~keep).sum())

    x = _to_float(column("x_deg"))
    y = _to_float(column("y_deg"))
    pupil = _to_float(column("pupil"))
    on_card, _ = _to_bool(column("on_card"))
    valid, bad_valid = _to_bool(column("valid"))
    usable = np.isfinite(x) & np.isfinite(y) & np.isfinite(pupil) & (pupil > 0) & ~bad_valid
    valid = valid & usable

    line_arr = np.asarray(lines, dtype=np.int64)
    table = SampleTable(
        t[keep],
        x[keep],
        y[keep],
        pupil[keep],
        on_card[keep],
        valid[keep],
        participant_id=pid[keep],
        trial_id=tid[keep],
        line_no=line_arr[keep],
        n_discarded=discarded,
    )
    _check_monotonic(table, path)
    return table


def _check_monotonic(table: SampleTable, path) -> None:
    if len(table) < 2:
        return
    keys = pd.MultiIndex.from_arrays([table.participant_id, table.trial_id])
    codes = pd.factorize(keys)[0]
    order = np.argsort(codes, kind="stable")
    c = codes[order]
    t = table.t_ms[order]
    same = c[1:] == c[:-1]
    bad = np.flatnonzero(same & (t[1:] <= t[:-1]))
    if bad.size:
        row = order[bad[0] + 1]
        raise NonMonotonicTime(
            f"t_ms={table.t_ms[row]!r} does not increase within participant "
            f"{table.participant_id[row]!r} trial {table.trial_id[row]}",
            path=path,
            line=int(table.line_no[row]),
        )


def load_events(path, schema: Mapping[str, str] | None = None) -> tuple[list[EventRow], int]:
    """Read ``events.csv``; returns the parsed rows and the count of discarded lines."""
    fh, reader, idx, width = _open_csv(path, EVENT_COLUMNS, schema)
    out = []
    discarded = 0
    kinds = {k.value.lower(): k for k in EventKind}
    with fh:
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                discarded += 1
                continue
            try:
                kind = kinds[row[idx["kind"]].strip().lower()]
                start = float(row[idx["start_ms"]])
                end = float(row[idx["end_ms"]])
                amp_s = row[idx["amplitude_deg"]].strip()
                amp = float(amp_s) if kind == EventKind.SACCADE else None
                event = OcularEvent(kind, start, end, amp)
                out.append(
                    EventRow(row[idx["participant_id"]].strip(), int(row[idx["trial_id"]]), event, line_no)
                )
            except (KeyError, ValueError):
                discarded += 1
    return out, discarded


def load_trials(path, schema: Mapping[str, str] | None = None) -> list[TrialIndexRow]:
    """Read ``trials.csv``. Any malformed row is an error: the index is small and hand-curated."""
    fh, reader, idx, width = _open_csv(path, TRIAL_COLUMNS, schema)
    out = []
    with fh:
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise InputValidationError(f"expected {width} fields, got {len(row)}", path=path, line=line_no)
            try:
                out.append(
                    TrialIndexRow(
                        participant_id=row[idx["participant_id"]].strip(),
                        trial_id=int(row[idx["trial_id"]]),
                        dataset_id=row[idx["dataset_id"]].strip(),
                        label=row[idx["label"]].strip(),
                        card_onset_ms=float(row[idx["card_onset_ms"]]),
                        card_offset_ms=float(row[idx["card_offset_ms"]]),
                        sample_rate_hz=int(row[idx["sample_rate_hz"]]),
                        line_no=line_no,
                    )
                )
            except ValueError as exc:
                raise InputValidationError(f"unparseable field ({exc})", path=path, line=line_no) from None
    return out


def assemble_trials(
    samples: SampleTable,
    events: Sequence[EventRow],
    trial_index: Sequence[TrialIndexRow],
    path=None,
) -> list[TrialRecord]:
    """Cut each participant's recording into trial records.

    A trial owns the samples and events lying inside ``[onset - 50 ms, offset]``.
    Rows with an empty label are non-target trials and are dropped.

    Raises
    ------
    UnknownLabel
        A label outside {Revealing, Concealing, Faking}.
    OverlappingTrials
        Two trial windows of one participant share a time point.
    """
    labels = {l.value: l for l in Label}
    datasets = {d.value: d for d in DatasetId}
    accepted = []
    for row in trial_index:
        if row.label == "":
            continue
        if row.label not in labels:
            raise UnknownLabel(f"unknown label {row.label!r}", path=path, line=row.line_no or None)
        if row.dataset_id not in datasets:
            raise InputValidationError(f"unknown dataset_id {row.dataset_id!r}", path=path, line=row.line_no or None)
        if row.card_onset_ms < BASELINE_MS or row.card_offset_ms <= row.card_onset_ms:
            raise InputValidationError(
                "card window must satisfy 50 <= onset < offset", path=path, line=row.line_no or None
            )
        accepted.append(row)

    by_pid: dict[str, list[TrialIndexRow]] = {}
    for row in accepted:
        by_pid.setdefault(row.participant_id, []).append(row)
    for pid, rows in by_pid.items():
        rows_sorted = sorted(rows, key=lambda r: r.card_onset_ms)
        for a, b in zip(rows_sorted, rows_sorted[1:]):
            if b.card_onset_ms - BASELINE_MS <= a.card_offset_ms:
                raise OverlappingTrials(
                    f"participant {pid!r}: trials {a.trial_id} and {b.trial_id} overlap",
                    path=path,
                    line=b.line_no or None,
                )

    sample_rows: dict[str, np.ndarray] = {}
    if len(samples):
        codes, uniques = pd.factorize(pd.Series(samples.participant_id, dtype=object))
        order = np.argsort(codes, kind="stable")
        bounds = np.searchsorted(codes[order], np.arange(len(uniques) + 1))
        for k, pid in enumerate(uniques):
            sample_rows[pid] = order[bounds[k] : bounds[k + 1]]
    events_by_pid: dict[str, list[OcularEvent]] = {}
    for ev in events:
        events_by_pid.setdefault(ev.participant_id, []).append(ev.event)

    out = []
    for row in accepted:
        lo, hi = row.card_onset_ms - BASELINE_MS, row.card_offset_ms
        rows = sample_rows.get(row.participant_id, np.zeros(0, dtype=np.int64))
        t = samples.t_ms[rows]
        sel = rows[(t >= lo) & (t <= hi)]
        block = Samples(
            samples.t_ms[sel],
            samples.x_deg[sel],
            samples.y_deg[sel],
            samples.pupil[sel],
            samples.on_card[sel],
            samples.valid[sel],
        )
        if len(block) > 1 and np.any(np.diff(block.t_ms) <= 0):
            raise NonMonotonicTime(
                f"participant {row.participant_id!r} trial {row.trial_id}: timestamps not increasing",
                path=path,
            )
        evs = tuple(
            e for e in events_by_pid.get(row.participant_id, ()) if e.start_ms >= lo and e.end_ms <= hi
        )
        out.append(
            TrialRecord(
                dataset_id=datasets[row.dataset_id],
                participant_id=row.participant_id,
                trial_id=row.trial_id,
                label=labels[row.label],
                card_onset_ms=row.card_onset_ms,
                card_offset_ms=row.card_offset_ms,
                samples=block,
                events=evs,
                sample_rate_hz=row.sample_rate_hz,
            )
        )
    return out


def load_session(samples_path, events_path, trials_path) -> tuple[list[TrialRecord], dict]:
    """Load all three files and assemble trials. ``events_path`` may be None."""
    samples = load_samples(samples_path)
    if events_path is not None:
        events, ev_discarded = load_events(events_path)
    else:
        events, ev_discarded = [], 0
    index = load_trials(trials_path)
    trials = assemble_trials(samples, events, index, path=trials_path)
    stats = {
        "samples": len(samples),
        "samples_discarded": samples.n_discarded,
        "events": len(events),
        "events_discarded": ev_discarded,
        "trials": len(trials),
    }
    return trials, stats


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def write_trials(records: Sequence[TrialRecord], directory) -> dict[str, str]:
    """Write records as samples.csv, events.csv and trials.csv under ``directory``."""
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, f"{name}.csv") for name in ("samples", "events", "trials")}
    with open(paths["samples"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for rec in records:
            s = rec.samples
            for i in range(len(s)):
                w.writerow(
                    (
                        rec.participant_id,
                        rec.trial_id,
                        _fmt(s.t_ms[i]),
                        _fmt(s.x_deg[i]),
                        _fmt(s.y_deg[i]),
                        _fmt(s.pupil[i]),
                        int(s.on_card[i]),
                        int(s.valid[i]),
                    )
                )
    with open(paths["events"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for rec in records:
            for e in rec.events:
                w.writerow(
                    (
                        rec.participant_id,
                        rec.trial_id,
                        e.kind.value,
                        _fmt(e.start_ms),
                        _fmt(e.end_ms),
                        "" if e.amplitude_deg is None else _fmt(e.amplitude_deg),
                    )
                )
    with open(paths["trials"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for rec in records:
            w.writerow(
                (
                    rec.participant_id,
                    rec.trial_id,
                    rec.dataset_id.value,
                    rec.label.value,
                    _fmt(rec.card_onset_ms),
                    _fmt(rec.card_offset_ms),
                    rec.sample_rate_hz,
                )
            )
    return paths
