import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from babymamba_har import datapipe as dp
from babymamba_har.errors import ConfigError, DataError, ProtocolError, SchemaError


def _rec(T=300, C=2, subject=0, labels=None, fs=50.0, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(T, dtype=int) if labels is None else labels
    return dp.Recording(subject, rng.normal(size=(C, T)), fs, labels)


# windowing ------------------------------------------------------------------

def test_window_offsets_for_short_stride():
    ws = dp.window(_rec(T=98 + 24), 98, 24)
    assert ws.starts.tolist() == [0, 24] and ws.X.shape == (2, 2, 98)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(1, 40))
def test_disjoint_window_count(T, L):
    ws = dp.window(_rec(T=T), L, L)
    assert len(ws) == (T // L)


def test_window_contents_and_uniform_labels():
    rec = _rec(T=50, labels=np.full(50, 3))
    ws = dp.window(rec, 10, 7)
    assert set(ws.y) == {3}
    np.testing.assert_array_equal(ws.X[2], rec.data[:, 14:24])
    assert ws.chrono.tolist() == list(range(len(ws)))


def test_plurality_label_and_tie_break():
    labels = np.array([2, 2, 1, 1, 1, 0, 0, 0])
    assert dp.window(_rec(T=8, labels=labels), 8, 8).y[0] == 1
    tie = np.array([4, 4, 1, 1])
    assert dp.window(_rec(T=4, labels=tie), 4, 4).y[0] == 4


def test_window_longer_than_recording(caplog):
    with caplog.at_level(logging.WARNING):
        ws = dp.window(_rec(T=20), 30, 5)
    assert len(ws) == 0 and ws.notes and "exceeds" in caplog.text
    with pytest.raises(ConfigError):
        dp.window(_rec(), 0, 1)


# normalisation --------------------------------------------------------------

def test_zscore_on_training_data(rng):
    ws = dp.window(dp.Recording(0, rng.normal(3, 5, size=(3, 400)), 50, np.zeros(400)), 40, 40)
    out = dp.normalize(ws, dp.fit_norm_stats(ws))
    flat = np.moveaxis(out.X, 1, 0).reshape(3, -1)
    np.testing.assert_allclose(flat.mean(1), 0, atol=1e-10)
    np.testing.assert_allclose(flat.std(1), 1, atol=1e-10)


def test_constant_channel_maps_to_zero():
    X = np.ones((4, 2, 8))
    X[:, 1] = np.arange(8)
    out = dp.apply_norm(X, dp.fit_norm_stats(X))
    assert np.all(out[:, 0] == 0) and np.all(np.isfinite(out))


def test_robust_scaling_resists_outlier(rng):
    X = rng.normal(size=(50, 1, 20))
    Xo = X.copy()
    Xo[0, 0, 0] = 1e4
    z0, z1 = dp.fit_norm_stats(X), dp.fit_norm_stats(Xo)
    r0, r1 = dp.fit_norm_stats(X, "robust"), dp.fit_norm_stats(Xo, "robust")
    assert abs(r1.center[0] - r0.center[0]) < abs(z1.center[0] - z0.center[0])
    with pytest.raises(ConfigError):
        dp.fit_norm_stats(X, "minmax")


def test_normalisation_stats_come_from_train_only():
    recs = dp.synth_har(n_subjects=4, windows_per_class=2, seed=3)
    recs[3].data *= 100.0  # a wildly scaled test subject must not move the statistics
    m = dp.DatasetManifest("s", 6, 50.0, 128, 128, test_subjects=[3])
    train, test, stats = dp.prepare_splits(m, recs)
    raw = dp.window_recordings(recs, 128, 128)
    ref = dp.fit_norm_stats(raw.subset(np.flatnonzero(raw.subjects != 3)))
    np.testing.assert_allclose(stats.center, ref.center)
    np.testing.assert_allclose(stats.scale, ref.scale)
    assert set(test.subjects) == {3} and 3 not in set(train.subjects)


# filtering ------------------------------------------------------------------

@pytest.mark.parametrize("cutoff,fs,order", [(5, 100, 4), (5, 98, 4), (12, 50, 2), (1, 30, 6)])
def test_butterworth_matches_scipy(cutoff, fs, order):
    b, a = dp.butter_lowpass(cutoff, fs, order)
    bs, as_ = signal.butter(order, cutoff, fs=fs)
    np.testing.assert_allclose(b, bs, atol=1e-14)
    np.testing.assert_allclose(a, as_, atol=1e-12)


def test_filtfilt_matches_scipy(rng):
    b, a = dp.butter_lowpass(5, 100, 4)
    x = rng.normal(size=(3, 500))
    np.testing.assert_allclose(dp.filtfilt(b, a, x), signal.filtfilt(b, a, x, padtype="odd", padlen=24),
                               atol=1e-11)


def test_filter_dc_and_gain():
    fs = 100.0
    t = np.arange(2000) / fs
    np.testing.assert_allclose(dp.butter_lowpass_filtfilt(np.full((1, 400), 3.7), 5, fs), 3.7, atol=1e-8)
    x5 = np.sin(2 * np.pi * 5 * t)[None]
    y5 = dp.butter_lowpass_filtfilt(x5, 5, fs)
    mid = slice(500, 1500)
    assert np.max(np.abs(y5[0, mid])) == pytest.approx(0.5, abs=0.05)
    lags = np.arange(-10, 11)
    xc = [np.dot(y5[0, mid], np.roll(x5[0], k)[mid]) for k in lags]
    assert lags[int(np.argmax(xc))] == 0
    y25 = dp.butter_lowpass_filtfilt(np.sin(2 * np.pi * 25 * t)[None], 5, fs)
    assert np.max(np.abs(y25[0, mid])) < 0.01


def test_filter_rejects_bad_design():
    with pytest.raises(ConfigError):
        dp.butter_lowpass(60, 100)
    with pytest.raises(ConfigError):
        dp.butter_lowpass_filtfilt(np.ones((1, 10)), 5, 100)


# splits ---------------------------------------------------------------------

def _multi_class_stream(n_per_class=10, L=8, stride=4, classes=3):
    labels = np.repeat(np.arange(classes), n_per_class * L)
    rec = dp.Recording(0, np.random.default_rng(0).normal(size=(2, len(labels))), 50, labels)
    return dp.window(rec, L, stride)


def test_temporal_split_chronology_and_purge():
    ws = _multi_class_stream()
    train, test = dp.split_temporal(ws)
    for c in np.unique(ws.y):
        tr, te = train.chrono[train.y == c], test.chrono[test.y == c]
        assert tr.max() < te.min()
    # no test window shares a sample with a training window
    for s in test.starts:
        assert np.all((train.starts + 8 <= s) | (train.starts >= s + 8))


def test_temporal_split_counts():
    rec = dp.Recording(0, np.zeros((1, 100)), 10, np.zeros(100))
    train, test = dp.split_temporal(dp.window(rec, 10, 10))
    assert (len(train), len(test)) == (8, 2)
    with pytest.raises(ConfigError):
        dp.split_temporal(dp.window(rec, 10, 10), 1.0)


def test_loso_and_subject_split():
    ws = dp.window_recordings([_rec(T=40, subject=s, seed=s) for s in range(4)], 10, 10)
    folds = dp.split_loso(ws)
    assert len(folds) == 4
    for held, train, test in folds:
        assert set(test.subjects) == {held} and held not in set(train.subjects)
    with pytest.raises(ProtocolError):
        dp.split_subject(dp.window(_rec(T=40), 10, 10), [0])
    with pytest.raises(ProtocolError):
        dp.split_subject(ws, [9])


def test_manifest_protocols_run_end_to_end(tmp_path):
    recs = dp.synth_har(n_subjects=3, windows_per_class=3, seed=1)
    for split, extra in (("loso", {"loso_fold": 2}), ("temporal", {}), ("subject", {})):
        for prep in ("zscore", "rescue_robust", "rescue_lowpass"):
            m = dp.DatasetManifest("s", 6, 50.0, 128, 64, preprocessing=prep, split=split, **extra)
            train, test, stats = dp.prepare_splits(m, recs)
            assert len(train) and len(test)
            assert stats.mode == ("robust" if prep == "rescue_robust" else "zscore")
    with pytest.raises(ProtocolError):
        dp.prepare_splits(dp.DatasetManifest("s", 6, 50.0, 128, 64, split="loso", loso_fold=7), recs)
    with pytest.raises(DataError):
        dp.prepare_splits(dp.DatasetManifest("s", 5, 50.0, 128, 64), recs)


# augmentation ---------------------------------------------------------------

def test_augment_off_is_identity(rng):
    x = rng.normal(size=(3, 32))
    np.testing.assert_array_equal(dp.augment(x, rng, dp.AugmentConfig.off()), x)


def test_magnitude_preserves_zero_crossings(rng):
    x = np.sin(np.linspace(0, 12, 64))[None]
    cfg = dp.AugmentConfig(p_time_warp=0, p_magnitude=1, p_jitter=0, p_channel_dropout=0)
    y = dp.augment(x, rng, cfg)
    assert np.sum(np.diff(np.sign(x)) != 0) == np.sum(np.diff(np.sign(y)) != 0)
    assert 0.8 <= y[0, 10] / x[0, 10] <= 1.2


def test_channel_dropout_zeroes_exactly_one(rng):
    x = rng.normal(size=(3, 16)) + 5
    cfg = dp.AugmentConfig(p_time_warp=0, p_magnitude=0, p_jitter=0, p_channel_dropout=1)
    y = dp.augment(x, rng, cfg)
    assert sum(not row.any() for row in y) == 1


def test_time_warp_keeps_endpoints_and_shape(rng):
    x = rng.normal(size=(2, 40))
    y = dp.time_warp(x, rng)
    assert y.shape == x.shape
    np.testing.assert_allclose(y[:, [0, -1]], x[:, [0, -1]])


def test_augment_batch_reproducible():
    X = np.random.default_rng(0).normal(size=(5, 2, 16))
    a = dp.augment_batch(X, np.random.default_rng(9), dp.AugmentConfig())
    b = dp.augment_batch(X, np.random.default_rng(9), dp.AugmentConfig())
    np.testing.assert_array_equal(a, b)


# synthetic data and csv -----------------------------------------------------

def test_synth_determinism_and_balance():
    a, b = dp.synth_har(seed=5), dp.synth_har(seed=5)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.data, rb.data)
    ws = dp.window_recordings(a, 128, 128)
    counts = np.bincount(ws.y)
    assert counts.max() - counts.min() <= 1


def _spectral_features(X):
    return np.log1p(np.abs(np.fft.rfft(X, axis=-1))).mean(axis=1)


def test_synth_classes_separable_by_frequency_centroids():
    ws = dp.window_recordings(dp.synth_har(seed=0), 128, 128)
    train, test = dp.split_subject(ws, [6, 7])
    F_tr, F_te = _spectral_features(train.X), _spectral_features(test.X)
    cents = np.stack([F_tr[train.y == k].mean(0) for k in range(3)])
    pred = np.argmin(((F_te[:, None] - cents[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == test.y) > 0.9


def test_asymmetric_synth_has_reversed_signatures():
    recs = dp.synth_har(n_subjects=1, n_classes=3, seed=0, noise=0.0, asymmetric=True)
    ws = dp.window_recordings(recs, 128, 128)
    skew = [np.mean(np.diff(ws.X[ws.y == k]) > 0) for k in range(3)]
    # rising-ramp dominated, symmetric, falling-ramp dominated
    assert skew[0] > 0.6 and skew[2] < 0.4


def test_csv_round_trip(tmp_path):
    recs = dp.synth_har(n_subjects=3, windows_per_class=1, seed=2)
    path = tmp_path / "d.csv"
    dp.write_csv(recs, path)
    back = dp.load_csv(path)
    assert [r.subject_id for r in back] == [0, 1, 2]
    for r, s in zip(recs, back):
        np.testing.assert_array_equal(r.data, s.data)
        np.testing.assert_array_equal(r.labels, s.labels)
        assert s.fs == pytest.approx(50.0)


@pytest.mark.parametrize("text,match", [
    ("subject,timestamp,ch_0\n0,0,1\n", "header"),
    ("subject,timestamp,label,ch_0\n0,0,1\n", "line 2|:2:"),
    ("subject,timestamp,label,ch_0\n0,0,1,2\n0,0.1,1,abc\n", ":3:"),
    ("subject,timestamp,label,ch_0\n0,0.1,1,2\n0,0.1,1,3\n", "increasing"),
    ("", "empty"),
])
def test_csv_schema_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(SchemaError, match=match):
        dp.load_csv(p)


def test_manifest_round_trip_and_errors(tmp_path):
    from babymamba_har.presets import get_preset
    m = dp.DatasetManifest.from_preset(get_preset("skoda"), data="x.csv")
    assert (m.seq_len, m.stride, m.split, m.preprocessing) == (98, 24, "temporal", "rescue_lowpass")
    m.save(tmp_path / "m.json")
    assert dp.DatasetManifest.load(tmp_path / "m.json") == m
    assert m.data_path(tmp_path / "m.json") == (tmp_path / "x.csv").resolve()
    with pytest.raises(DataError):
        dp.DatasetManifest.load(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text('{"name": "a", "bogus": 1}')
    with pytest.raises(SchemaError):
        dp.DatasetManifest.load(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        dp.DatasetManifest("a", 3, 50, 128, 64, split="random")


def test_filtfilt_commutes_with_time_reversal(rng):
    x = rng.normal(size=(2, 600))
    fwd = dp.butter_lowpass_filtfilt(x, 5, 100)
    rev = dp.butter_lowpass_filtfilt(x[:, ::-1], 5, 100)[:, ::-1]
    # edge transients of this design decay below 1e-8 within ~1.5 s at 100 Hz
    np.testing.assert_allclose(fwd[:, 150:-150], rev[:, 150:-150], atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 120), st.integers(1, 30))
def test_disjoint_windows_reconstruct_stream(T, L):
    rec = _rec(T=T, C=3)
    ws = dp.window(rec, L, L)
    if len(ws):
        np.testing.assert_array_equal(np.concatenate(list(ws.X), axis=1), rec.data[:, :len(ws) * L])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(8, 40))
def test_augment_preserves_shape(seed, C, L):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(C, L))
    cfg = dp.AugmentConfig(p_time_warp=1, p_magnitude=1, p_jitter=1, p_channel_dropout=1)
    assert dp.augment(x, rng, cfg).shape == x.shape
