import logging

import numpy as np
import pytest
import scipy.signal as sps
from hypothesis import given, settings, strategies as st

from attx import preprocess as P
from attx.preprocess import (BiquadCascade, Condition, FilterDesignError, Label, PipelineConfig,
                             SignalRecord, binarize, build_dataset, design_butterworth, filter_signal,
                             majority_condition, resample, resampled_length, segment, window_count,
                             zscore_subject)

FS = 700.0


def db(h):
    return 20 * np.log10(np.abs(h))


# --- filter design ----------------------------------------------------------

def test_lowpass_dc_gain_is_one():
    f = design_butterworth("lowpass", 4, 3.0, FS)
    assert abs(abs(f.response(0.0, FS)) - 1.0) < 1e-9


def test_bandpass_blocks_dc_and_nyquist():
    f = design_butterworth("bandpass", 4, (5.0, 15.0), FS)
    assert abs(f.response(0.0, FS)) < 1e-9
    assert abs(f.response(FS / 2, FS)) < 1e-9


def test_bandpass_center_and_stopband():
    f = design_butterworth("bandpass", 4, (5.0, 15.0), FS)
    assert abs(db(f.response(np.sqrt(75.0), FS))) < 1.0
    assert db(f.response(1.0, FS)) < -20


@pytest.mark.parametrize("kind,order,cut", [("lowpass", 1, 3.0), ("lowpass", 4, 3.0), ("lowpass", 5, 100.0),
                                            ("bandpass", 2, (5.0, 15.0)), ("bandpass", 4, (5.0, 15.0)),
                                            ("bandpass", 3, (0.5, 40.0))])
def test_matches_scipy_butter(kind, order, cut):
    ours = design_butterworth(kind, order, cut, FS)
    ref = sps.butter(order, cut, btype=kind, fs=FS, output="sos")
    freqs = np.linspace(0.0, FS / 2, 513)
    _, h_ref = sps.sosfreqz(ref, worN=freqs, fs=FS)
    np.testing.assert_allclose(ours.response(freqs, FS), h_ref, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["lowpass", "bandpass"]), st.integers(1, 8),
       st.floats(0.01, 0.45), st.floats(1.2, 3.0), st.sampled_from([256.0, 700.0, 1000.0]))
def test_designed_filters_are_stable(kind, order, lo_frac, ratio, fs):
    lo = lo_frac * fs / 2
    cut = lo if kind == "lowpass" else (lo, min(lo * ratio, 0.99 * fs / 2))
    f = design_butterworth(kind, order, cut, fs)
    assert f.is_stable()
    assert np.all(np.abs(f.poles()) < 1.0)


@pytest.mark.parametrize("args", [("lowpass", 4, 350.0, FS), ("lowpass", 4, 400.0, FS), ("lowpass", 4, 0.0, FS),
                                  ("bandpass", 4, (15.0, 5.0), FS), ("bandpass", 4, (5.0, 360.0), FS),
                                  ("bandpass", 4, 5.0, FS), ("lowpass", 0, 3.0, FS), ("highpass", 4, 3.0, FS)])
def test_design_errors(args):
    with pytest.raises(FilterDesignError):
        design_butterworth(*args)


# --- filtering --------------------------------------------------------------

def test_identity_cascade_passes_impulse():
    ident = BiquadCascade(np.array([[1.0, 0, 0, 0, 0]]))
    x = np.zeros(16)
    x[3] = 1.0
    np.testing.assert_array_equal(filter_signal(x, ident), x)


def test_lowpass_converges_to_dc():
    y = filter_signal(np.full(7000, 2.5), design_butterworth("lowpass", 4, 3.0, FS))
    assert y.size == 7000
    assert abs(y[-1] - 2.5) < 1e-6


def test_filter_is_causal():
    f = design_butterworth("bandpass", 4, (5.0, 15.0), FS)
    x = np.random.default_rng(0).normal(size=500)
    y1 = filter_signal(x, f)
    x2 = x.copy()
    x2[300:] = 0.0
    np.testing.assert_array_equal(filter_signal(x2, f)[:300], y1[:300])


def test_bandpass_attenuates_white_noise_outside_2_30_hz():
    x = np.random.default_rng(1).normal(size=2 ** 17)
    y = filter_signal(x, design_butterworth("bandpass", 4, (5.0, 15.0), FS))
    freqs, pxx = sps.periodogram(y, fs=FS)
    passband = pxx[(freqs >= 5) & (freqs <= 15)].mean()
    outside = pxx[((freqs > 0) & (freqs < 2)) | (freqs > 30)].mean()
    assert 10 * np.log10(passband / outside) >= 20


def test_zero_phase_has_no_lag():
    t = np.arange(7000) / FS
    x = np.sin(2 * np.pi * 8 * t)
    f = design_butterworth("bandpass", 4, (5.0, 15.0), FS)
    y = filter_signal(x, f, zero_phase=True)
    mid = slice(2000, 5000)
    assert np.max(np.abs(y[mid] - x[mid])) < 0.05


# --- z-score ----------------------------------------------------------------

def test_zscore_examples(caplog):
    np.testing.assert_allclose(zscore_subject([-1.0, 1.0]), [-1.0, 1.0])
    with caplog.at_level(logging.WARNING):
        np.testing.assert_array_equal(zscore_subject(np.full(10, 4.2)), np.zeros(10))
    assert "constant" in caplog.text


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5000), st.floats(-100, 100), st.floats(0.01, 100), st.integers(0, 2 ** 31))
def test_zscore_statistics(n, loc, scale, seed):
    x = np.random.default_rng(seed).normal(loc, scale, size=n)
    z = zscore_subject(x)
    assert abs(z.mean()) < 1e-9
    assert abs(z.std() - 1.0) < 1e-9


# --- resampling -------------------------------------------------------------

def test_resample_10s_length():
    assert resample(np.random.default_rng(2).normal(size=7000), 700, 256).size == 2560


def test_resample_constant():
    y = resample(np.full(7000, 3.0), 700, 256)
    np.testing.assert_allclose(y, 3.0, atol=1e-9)


def test_resample_sinusoid():
    t = np.arange(7000) / 700.0
    y = resample(np.sin(2 * np.pi * 8 * t), 700, 256)
    ref = np.sin(2 * np.pi * 8 * np.arange(2560) / 256.0)
    assert np.max(np.abs(y - ref)) < 0.02


def test_resample_empty():
    assert resample(np.array([]), 700, 256).size == 0


@given(st.integers(0, 200000))
def test_resample_length_exact(n):
    assert resampled_length(n, 700, 256) == (n * 256) // 700


def test_resample_length_sweep_matches_output():
    for n in (1, 2, 3, 699, 700, 701, 2734, 7001):
        assert resample(np.ones(n), 700, 256).size == n * 256 // 700


# --- segmentation and labels ------------------------------------------------

def test_segment_counts():
    assert len(segment(np.zeros(2560), np.full(2560, 2))) == 1
    assert len(segment(np.zeros(15360), np.full(15360, 2))) == 11
    assert len(segment(np.zeros(2559), np.full(2559, 2))) == 0


@given(st.integers(0, 40000))
def test_segment_count_formula(n):
    expected = (n - 2560) // 1280 + 1 if n >= 2560 else 0
    assert window_count(n, 2560, 1280) == expected
    assert len(segment(np.zeros(n), np.full(n, 1))) == expected


def test_segment_all_stress_labels():
    ws = segment(np.arange(15360.0), np.full(15360, Condition.STRESS))
    assert all(w.condition == Condition.STRESS for w in ws)
    assert [w.start for w in ws] == [1280 * i for i in range(11)]
    np.testing.assert_array_equal(ws[3].samples, np.arange(3840.0, 3840.0 + 2560))


def test_segment_drops_other_and_majority_vote():
    lab = np.full(5120, Condition.NEUTRAL)
    lab[:2000] = Condition.OTHER  # window 0 mostly other
    ws = segment(np.zeros(5120), lab)
    assert [w.start for w in ws] == [1280, 2560]


def test_majority_tie_prefers_stress():
    assert majority_condition([2, 2, 1, 1]) == Condition.STRESS
    assert majority_condition([0, 0, 2, 2]) == Condition.STRESS
    assert majority_condition([0, 0, 1, 1]) == Condition.NEUTRAL
    assert majority_condition([3, 3, 3, 1]) == Condition.AMUSEMENT


def test_binarize():
    assert binarize(Condition.STRESS) == Label.STRESS
    assert binarize(Condition.NEUTRAL) == Label.NON_STRESS
    assert binarize(Condition.AMUSEMENT) == Label.NON_STRESS
    with pytest.raises(ValueError):
        binarize(Condition.OTHER)


# --- composition ------------------------------------------------------------

def records(sid, seconds_ecg, seconds_eda, code=Condition.STRESS, seed=0):
    rng = np.random.default_rng(seed)
    n1, n2 = int(seconds_ecg * FS), int(seconds_eda * FS)
    return [SignalRecord(sid, "ECG", FS, rng.normal(size=n1), np.full(n1, code)),
            SignalRecord(sid, "EDA", FS, rng.normal(size=n2), np.full(n2, code))]


def test_build_dataset_60s_gives_11_pairs():
    pairs = build_dataset(records("S1", 60, 60))
    assert len(pairs) == 11
    assert all(p.ecg.shape == (2560,) and p.eda.shape == (2560,) for p in pairs)
    assert all(p.label == Label.STRESS for p in pairs)


def test_build_dataset_truncates_to_common_span():
    a = build_dataset(records("S1", 60, 70))
    assert len(a) == 11
    # the truncated result equals running on explicitly truncated inputs
    recs = records("S1", 60, 70)
    recs[1] = SignalRecord("S1", "EDA", FS, recs[1].samples[:42000], recs[1].condition_labels[:42000])
    b = build_dataset(recs)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.ecg, y.ecg)
        np.testing.assert_array_equal(x.eda, y.eda)


def test_build_dataset_empty_and_missing_modality(caplog):
    empty = [SignalRecord("S0", m, FS, np.array([]), np.array([])) for m in ("ECG", "EDA")]
    assert build_dataset(empty) == []
    with caplog.at_level(logging.WARNING):
        assert build_dataset(records("S1", 60, 60)[:1]) == []
    assert "S1" in caplog.text


def test_windows_pair_same_span_and_subject():
    pairs = build_dataset(records("A", 40, 40) + records("B", 30, 30, seed=1))
    assert {p.subject_id for p in pairs} == {"A", "B"}
    starts = {}
    for p in pairs:
        starts.setdefault(p.subject_id, []).append(p.start)
    assert starts["A"] == [0, 1280, 2560, 3840, 5120, 6400, 7680][:len(starts["A"])]
    assert all(s % 1280 == 0 for v in starts.values() for s in v)


def test_pipeline_order_filter_zscore_resample(monkeypatch):
    calls = []

    def spy(name):
        fn = getattr(P, name)

        def wrapped(x, *a, **k):
            calls.append((name, len(x)))
            return fn(x, *a, **k)
        monkeypatch.setattr(P, name, wrapped)

    for name in ("filter_signal", "zscore_subject", "resample", "segment"):
        spy(name)
    build_dataset(records("S1", 20, 20))
    # per modality: band filter, z-score at 700 Hz, resample (whose anti-alias
    # filter also goes through filter_signal); segmentation sees 256 Hz
    per_modality = [("filter_signal", 14000), ("zscore_subject", 14000), ("resample", 14000),
                    ("filter_signal", 14000)]
    assert calls == per_modality * 2 + [("segment", 5120)] * 2


def test_pipeline_config_roundtrip():
    cfg = PipelineConfig(filter_order=2, zero_phase=True)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_signal_record_validation():
    with pytest.raises(ValueError):
        SignalRecord("S", "ECG", FS, np.zeros(10), np.zeros(9))
    with pytest.raises(ValueError):
        SignalRecord("S", "ECG", 0.0, np.zeros(10), np.zeros(10))
