import numpy as np
import pytest

from citeye import synth
from citeye.ingest import DatasetId, Label, Samples, TrialRecord


def make_trial(
    t,
    pupil,
    onset=100.0,
    offset=None,
    on_card=None,
    valid=None,
    x=None,
    y=None,
    events=(),
    dataset=DatasetId.EYELINK,
    participant="P1",
    trial_id=1,
    label=Label.REVEALING,
    rate=1000,
):
    t = np.asarray(t, dtype=float)
    n = t.size
    pupil = np.broadcast_to(np.asarray(pupil, dtype=float), (n,)).copy()
    samples = Samples(
        t,
        np.zeros(n) if x is None else x,
        np.zeros(n) if y is None else y,
        pupil,
        np.ones(n, bool) if on_card is None else on_card,
        np.ones(n, bool) if valid is None else valid,
    )
    return TrialRecord(
        dataset_id=dataset,
        participant_id=participant,
        trial_id=trial_id,
        label=label,
        card_onset_ms=onset,
        card_offset_ms=float(t[-1]) if offset is None else offset,
        samples=samples,
        events=tuple(events),
        sample_rate_hz=rate,
    )


@pytest.fixture(scope="session")
def null_dataset(tmp_path_factory):
    """10 participants x 2 trials per condition, no condition effects."""
    d = tmp_path_factory.mktemp("null")
    synth.generate_to(d, synth.null_spec(), 10, 2, seed=3)
    return d


@pytest.fixture(scope="session")
def null_features(null_dataset):
    from citeye.features import featurize
    from citeye.ingest import load_session

    trials, _ = load_session(null_dataset / "samples.csv", null_dataset / "events.csv", null_dataset / "trials.csv")
    return featurize(trials)


def toy_frame(n_participants=10, trials_per_condition=3, seed=0, signal=0.0):
    """A small feature table drawn directly, for harness tests that do not need the raw chain."""
    import pandas as pd

    from citeye.features import FEATURE_NAMES

    rng = np.random.default_rng(seed)
    rows = []
    for p in range(n_participants):
        for label in Label:
            for k in range(trials_per_condition):
                v = rng.normal(size=len(FEATURE_NAMES))
                if label is Label.CONCEALING:
                    v[0] += signal
                rows.append([f"P{p:02d}", len(rows), label.value, *v])
    return pd.DataFrame(rows, columns=["participant_id", "trial_id", "label", *FEATURE_NAMES])
