import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from citeye.errors import TooFewSamples
from citeye.events import EventThresholds, detect_events_ivt, filter_events
from citeye.ingest import EventKind, OcularEvent, Samples

TH = EventThresholds()


def ev(kind, dur, start=0.0):
    amp = 1.0 if kind is EventKind.SACCADE else None
    return OcularEvent(kind, start, start + dur, amp)


@pytest.mark.parametrize(
    "kind,dur,kept",
    [
        (EventKind.FIXATION, 59, False),
        (EventKind.FIXATION, 60, True),
        (EventKind.FIXATION, 5000, True),
        (EventKind.FIXATION, 5200, False),
        (EventKind.SACCADE, 14.9, False),
        (EventKind.SACCADE, 15, True),
        (EventKind.SACCADE, 400, True),
        (EventKind.SACCADE, 401, False),
        (EventKind.BLINK, 59.99, False),
        (EventKind.BLINK, 700, True),
        (EventKind.BLINK, 700.5, False),
    ],
)
def test_threshold_boundaries(kind, dur, kept):
    assert (filter_events([ev(kind, dur)]) != []) is kept


def test_thresholds_validated():
    with pytest.raises(ValueError):
        EventThresholds(fixation_min_ms=100, fixation_max_ms=50)
    with pytest.raises(ValueError):
        EventThresholds(saccade_min_ms=0)


events_st = st.lists(
    st.tuples(st.sampled_from(list(EventKind)), st.floats(0, 6000), st.floats(0.01, 6000)).map(
        lambda t: ev(t[0], t[2], t[1])
    ),
    max_size=40,
)


@settings(max_examples=200, deadline=None)
@given(events_st)
def test_filter_properties(events):
    out = filter_events(events, TH)
    # brute-force predicate
    assert out == [e for e in events if TH.band(e.kind)[0] <= e.end_ms - e.start_ms <= TH.band(e.kind)[1]]
    assert filter_events(out, TH) == out
    for kind in EventKind:
        assert sum(e.kind is kind for e in out) <= sum(e.kind is kind for e in events)
    # order preserved: out is a subsequence of events
    it = iter(events)
    assert all(any(o is e for e in it) for o in out)


def _samples(t, x, y=None, valid=None):
    n = len(t)
    return Samples(t, x, np.zeros(n) if y is None else y, np.full(n, 1000.0), np.ones(n, bool),
                   np.ones(n, bool) if valid is None else valid)


def test_still_gaze_is_one_fixation():
    t = np.arange(1000.0)
    out = detect_events_ivt(_samples(t, np.zeros(1000)))
    assert out == [OcularEvent(EventKind.FIXATION, 0.0, 1000.0)]


def test_jump_gives_fixation_saccade_fixation():
    # 5 deg in 20 ms (250 deg/s) at 1 kHz, starting at t = 400
    t = np.arange(1000.0)
    x = np.zeros(1000)
    x[400:420] = 0.25 * np.arange(1, 21)
    x[420:] = 5.0
    out = detect_events_ivt(_samples(t, x))
    assert [e.kind for e in out] == [EventKind.FIXATION, EventKind.SACCADE, EventKind.FIXATION]
    sac = out[1]
    assert (sac.start_ms, sac.end_ms) == (400.0, 420.0)
    assert sac.amplitude_deg == pytest.approx(5.0, abs=1e-12)
    assert out[0].end_ms == 400.0 and out[2].start_ms == 420.0


def test_invalid_block_becomes_blink():
    t = np.arange(1000.0)
    valid = np.ones(1000, bool)
    valid[300:400] = False
    out = detect_events_ivt(_samples(t, np.zeros(1000), valid=valid))
    blinks = [e for e in out if e.kind is EventKind.BLINK]
    assert len(blinks) == 1 and blinks[0].duration_ms == 100.0


def test_short_invalid_block_is_not_a_blink():
    t = np.arange(1000.0)
    valid = np.ones(1000, bool)
    valid[300:374] = False
    out = detect_events_ivt(_samples(t, np.zeros(1000), valid=valid))
    assert not [e for e in out if e.kind is EventKind.BLINK]


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        detect_events_ivt(_samples(np.array([0.0, 1.0]), np.zeros(2), valid=np.array([True, False])))
