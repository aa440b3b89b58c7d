"""Run configuration: a ``key = value`` text file overridden by CLI flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InputValidationError
from .events import EventThresholds
from .features import FeatureConfig, FeatureGroup
from .harness import Task
from .pupil import PupilConfig


class ConfigError(InputValidationError):
    pass


@dataclass
class RunConfig:
    # inputs: raw CSVs, a features table, or a synth preset / spec file
    samples: str | None = None
    events: str | None = None
    trials: str | None = None
    features: str | None = None
    synth: str | None = None
    participants: int = 36
    trials_per_condition: int = 6

    task: str = "binary"
    group: str = "all"
    dataset: str | None = None
    seed: int = 0
    search_n: int = 100
    n_jobs: int = 1
    n_estimators_max: int = 10000
    out: str = "out"

    # preprocessing overrides
    fixation_min_ms: float = 60.0
    fixation_max_ms: float = 5000.0
    blink_min_ms: float = 60.0
    blink_max_ms: float = 700.0
    saccade_min_ms: float = 15.0
    saccade_max_ms: float = 400.0
    interpolate: bool | None = None
    baseline_mode: str = "subtractive"
    z_threshold: float = 3.0
    duration_mode: str = "mean"

    def input_source(self) -> str:
        """Which input kind is configured; exactly one is allowed."""
        kinds = []
        if self.samples or self.trials or self.events:
            kinds.append("files")
        if self.features:
            kinds.append("features")
        if self.synth:
            kinds.append("synth")
        if len(kinds) != 1:
            raise ConfigError(
                "configure exactly one input: samples/trials files, a features table, or a synth spec"
                + (f" (got {', '.join(kinds)})" if kinds else "")
            )
        if kinds[0] == "files" and not (self.samples and self.trials):
            raise ConfigError("file input needs both samples and trials (events optional)")
        return kinds[0]

    @property
    def task_enum(self) -> Task:
        return Task.parse(self.task)

    @property
    def group_enum(self) -> FeatureGroup:
        return FeatureGroup.parse(self.group)

    def thresholds(self) -> EventThresholds:
        return EventThresholds(
            self.fixation_min_ms, self.fixation_max_ms, self.blink_min_ms,
            self.blink_max_ms, self.saccade_min_ms, self.saccade_max_ms,
        )

    def feature_config(self) -> FeatureConfig:
        pupil = PupilConfig(interpolate=self.interpolate, baseline_mode=self.baseline_mode, z_threshold=self.z_threshold)
        return FeatureConfig(thresholds=self.thresholds(), pupil=pupil, duration_mode=self.duration_mode)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str, path, line: int | None):
    spec = {f.name: f for f in fields(RunConfig)}[name]
    kind = str(spec.type)
    text = raw.strip()
    if text.lower() in ("", "none", "null") and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            return _BOOL[text.lower()]
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r}", path, line) from None
    return text


def parse_config_text(text: str, path="<config>") -> dict:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected key = value, got {line.strip()!r}", path, no)
        key, value = (s.strip() for s in body.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", path, no)
        out[key] = _coerce(key, value, path, no)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (if any) and apply non-None ``overrides`` on top."""
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", p) from None
        values.update(parse_config_text(text, p))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    cfg = RunConfig(**values)
    try:
        cfg.task_enum, cfg.group_enum
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    return cfg
