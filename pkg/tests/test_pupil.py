import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from citeye.errors import EmptyBaseline, InsufficientSupport
from citeye.ingest import DatasetId, EventKind, OcularEvent
from citeye.pupil import (
    N_BINS,
    BaselineWindow,
    PupilConfig,
    PupilSeries,
    baseline_correct,
    baseline_window,
    bin_50ms,
    bin_labels,
    interpolate_blink_gaps,
    preprocess_pupil,
    preprocess_trial,
    remove_outliers_z,
    select_on_card,
)

from conftest import make_trial

ONSET = 100.0
T = np.arange(0.0, ONSET + 2600.0)  # 1 kHz, covers baseline and the 2.5 s window


def test_select_all_on_card():
    s = select_on_card(make_trial(T, 1000.0, onset=ONSET))
    assert s.t_ms[0] == 1.0 and s.t_ms[-1] == 2500.0 and len(s) == 2500
    assert np.all(s.values == 1000.0)


def test_select_none_on_card_gives_missing_bins():
    trial = make_trial(T, 1000.0, onset=ONSET, on_card=np.zeros(T.size, bool))
    s = select_on_card(trial)
    assert np.all(s.missing)
    assert np.all(np.isnan(preprocess_trial(trial, PupilConfig(interpolate=False)).values))


def test_select_alternating_blocks():
    rel = T - ONSET
    on = (np.ceil(rel / 50) % 2 == 1) & (rel > 0)  # (0,50] on, (50,100] off, ...
    s = select_on_card(make_trial(T, 1000.0, onset=ONSET, on_card=on))
    kept = s.t_ms[~s.missing]
    assert kept.size == 1250
    assert np.all(np.ceil(kept / 50) % 2 == 1)


def test_no_gaps_unchanged():
    s = PupilSeries(np.arange(1.0, 101.0), np.linspace(1000, 1100, 100))
    out = interpolate_blink_gaps(s, [])
    np.testing.assert_array_equal(out.values, s.values)


def _gapped(values_fn, gap=(400.0, 500.0)):
    t = np.arange(1.0, 2501.0)
    v = values_fn(t)
    truth = v.copy()
    v[(t >= gap[0]) & (t <= gap[1])] = np.nan
    return PupilSeries(t, v), truth, gap


def test_constant_gap_filled_with_constant():
    s, truth, gap = _gapped(lambda t: np.full(t.size, 1200.0))
    np.testing.assert_allclose(interpolate_blink_gaps(s, [gap]).values, truth, rtol=0, atol=1e-9)


def test_linear_ramp_reproduced():
    s, truth, gap = _gapped(lambda t: 1000.0 + t)
    np.testing.assert_allclose(interpolate_blink_gaps(s, [gap]).values, truth, rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e-4, 1e-4), min_size=3, max_size=3), st.floats(100, 2000), st.integers(50, 2300))
def test_cubic_reproduced(coef, c0, start):
    def f(t):
        u = t - 1000.0
        return c0 + coef[0] * u + coef[1] * u**2 / 100 + coef[2] * u**3 / 1e4

    s, truth, gap = _gapped(f, (float(start), float(start + 120)))
    np.testing.assert_allclose(interpolate_blink_gaps(s, [gap]).values, truth, rtol=0, atol=1e-6)


def test_edge_gap_stays_missing_or_raises():
    s, _, gap = _gapped(lambda t: 1000.0 + t, (1.0, 60.0))
    out = interpolate_blink_gaps(s, [gap])
    assert np.all(np.isnan(out.values[:60]))
    with pytest.raises(InsufficientSupport):
        interpolate_blink_gaps(s, [gap], strict=True)


def test_interpolation_only_for_eyelink_by_default():
    cfg = PupilConfig()
    assert cfg.interpolate_for(DatasetId.EYELINK) and not cfg.interpolate_for(DatasetId.NEON)
    assert PupilConfig(interpolate=True).interpolate_for(DatasetId.NEON)


def test_baseline_arithmetic():
    s = PupilSeries([1.0, 2.0], [1210.0, 1220.0])
    out = baseline_correct(s, BaselineWindow(-50, 0, 1200.0))
    assert out.values.tolist() == [10.0, 20.0]
    assert baseline_correct(s, BaselineWindow(-50, 0, 1210.0), "divisive").values[0] == 1.0


def test_baseline_window_mean_over_valid_only():
    valid = np.ones(T.size, bool)
    valid[60] = False
    pupil = np.full(T.size, 1000.0)
    pupil[60] = 5.0
    pupil[70] = 1100.0
    b = baseline_window(make_trial(T, pupil, onset=ONSET, valid=valid))
    assert (b.start_ms, b.end_ms) == (50.0, 100.0)
    assert b.mean_pupil == pytest.approx((49 * 1000 + 100) / 49)


def test_empty_baseline():
    valid = (T >= ONSET)
    trial = make_trial(T, 1000.0, onset=ONSET, valid=valid)
    with pytest.raises(EmptyBaseline):
        baseline_window(trial)
    assert np.all(np.isnan(preprocess_trial(trial).values))


def test_constant_signal_gives_zero_bins():
    bins = preprocess_trial(make_trial(T, 1234.5, onset=ONSET))
    assert bins.values.shape == (N_BINS,)
    assert np.all(bins.values == 0.0)


def test_bin_labels():
    labels = bin_labels()
    assert labels[0] == 1 and labels[16] == 801 and labels[-1] == 2451 and labels.size == 50


def test_bin_boundaries():
    b = bin_50ms(PupilSeries([50.0, 50.5, 800.0, 800.5], [1.0, 2.0, 3.0, 4.0])).values
    assert b[0] == 1.0 and b[1] == 2.0
    assert b[15] == 3.0 and b[16] == 4.0  # bin 17 covers (800, 850]
    assert np.isnan(b[2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 3000), st.one_of(st.floats(-50, 50), st.just(np.nan))), max_size=200))
def test_always_fifty_bins(points):
    t = np.array([p[0] for p in points], dtype=float)
    v = np.array([p[1] for p in points], dtype=float)
    b = bin_50ms(PupilSeries(t, v))
    assert b.values.size == 50
    assert int(b.missing.sum()) + int((~b.missing).sum()) == 50


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(500, 1500))
def test_subtract_and_average_commute(seed, base):
    rng = np.random.default_rng(seed)
    s = PupilSeries(np.arange(1.0, 2501.0), rng.normal(1000, 30, 2500))
    bl = BaselineWindow(-50, 0, base)
    a = bin_50ms(baseline_correct(s, bl)).values
    b = bin_50ms(s).values - base
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_outliers_all_equal_noop():
    x = np.full((6, 50), 3.0)
    np.testing.assert_array_equal(remove_outliers_z(x, ["P"] * 6), x)


def _z_oracle(values):
    mu = statistics.fmean(values)
    sd = statistics.pstdev(values)
    return [(v - mu) / sd for v in values]


def test_outliers_hand_computed():
    # {0 x9, 100}: mean 10, population sd 30, z(100) = 3 exactly -> kept under |z| > 3
    ten = [0.0] * 9 + [100.0]
    assert _z_oracle(ten)[-1] == pytest.approx(3.0, abs=1e-12)
    out = remove_outliers_z(np.array(ten)[:, None], ["P"] * 10)
    assert out[-1, 0] == 100.0
    # {0 x19, 100}: mean 5, sd sqrt(475), z = 95 / 21.79 = 4.359 -> removed
    twenty = [0.0] * 19 + [100.0]
    assert _z_oracle(twenty)[-1] == pytest.approx(4.3588989, rel=1e-7)
    out = remove_outliers_z(np.array(twenty)[:, None], ["P"] * 20)
    assert np.isnan(out[-1, 0]) and np.all(out[:-1, 0] == 0.0)


def test_outliers_per_participant_and_infinite_threshold():
    col = np.array([0.0] * 19 + [100.0] + [100.0] * 20)[:, None]
    pids = ["A"] * 20 + ["B"] * 20
    out = remove_outliers_z(col, pids)
    assert np.isnan(out[19, 0]) and np.all(out[20:, 0] == 100.0)
    np.testing.assert_array_equal(remove_outliers_z(col, pids, np.inf), col)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_outlier_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_t(2, size=(25, 1))
    out = remove_outliers_z(x, ["P"] * 25)
    z = np.array(_z_oracle(x[:, 0].tolist()))
    np.testing.assert_array_equal(np.isnan(out[:, 0]), np.abs(z) > 3)


def test_blink_interpolation_inside_chain():
    pupil = 1000.0 + 0.01 * T
    valid = np.ones(T.size, bool)
    valid[(T >= ONSET + 400) & (T <= ONSET + 500)] = False
    blink = OcularEvent(EventKind.BLINK, ONSET + 400, ONSET + 500)
    trial = make_trial(T, pupil, onset=ONSET, valid=valid, events=[blink])
    on = preprocess_trial(trial, PupilConfig(interpolate=True)).values
    off = preprocess_trial(trial, PupilConfig(interpolate=False)).values
    clean = preprocess_trial(make_trial(T, pupil, onset=ONSET)).values
    np.testing.assert_allclose(on, clean, atol=1e-9)
    assert np.isnan(off[8]) and not np.isnan(on[8])


def _as_trial(bins, pid, trial_id):
    """Render 50 bins as a 20 Hz trial: one sample at each bin end, zero-valued baseline."""
    t = np.concatenate([[ONSET - 25.0], ONSET + 50.0 * np.arange(1, 51)])
    v = np.concatenate([[0.0], bins])
    valid = np.isfinite(v)
    return make_trial(t, np.where(valid, v, 1.0), onset=ONSET, valid=valid, participant=pid, trial_id=trial_id,
                      dataset=DatasetId.NEON, rate=20)


def test_chain_rerun_is_noop():
    rng = np.random.default_rng(5)
    trials = []
    for p in range(3):
        for k in range(8):
            pupil = 1000 + rng.normal(0, 5, T.size).cumsum() * 0.1
            valid = rng.random(T.size) > 0.05
            trials.append(make_trial(T, pupil, onset=ONSET, valid=valid, participant=f"P{p}", trial_id=k))
    cfg = PupilConfig(z_threshold=10.0)
    first = preprocess_pupil(trials, cfg)
    second = preprocess_pupil([_as_trial(first[i], tr.participant_id, i) for i, tr in enumerate(trials)], cfg)
    np.testing.assert_allclose(second, first, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(np.isnan(second), np.isnan(first))
