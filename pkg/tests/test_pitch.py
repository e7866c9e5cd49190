from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unit_codec.audio import Waveform, resample
from unit_codec.errors import InputTooShort, InsufficientVoicedFrames
from unit_codec.pitch import (PitchTrack, SpeakerStats, dump_jsonl, load_jsonl, normalize_per_speaker,
                              normalize_prefix, speaker_stats, track_pitch)

from conftest import tone


@pytest.mark.parametrize("freq", [80, 120, 220, 390])
def test_tone_tracked(freq):
    t = track_pitch(tone(freq), 50)
    assert t.voiced.mean() >= 0.9
    assert abs(np.median(t.f0[t.voiced]) / freq - 1) <= 0.03
    assert np.all((t.f0[t.voiced] >= 60) & (t.f0[t.voiced] <= 400))


def test_silence_unvoiced():
    t = track_pitch(Waveform(np.zeros(16000), 16000), 50)
    assert len(t) == 49 and not t.voiced.any() and not t.f0.any()


def test_noise_mostly_unvoiced():
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 32000)
    assert track_pitch(Waveform(x, 16000), 100).voiced.mean() < 0.2


def test_resampled_tone_agrees():
    w = tone(220, 1.0)
    a = track_pitch(w, 50)
    b = track_pitch(resample(w, 8000), 50)
    ma, mb = np.median(a.f0[a.voiced]), np.median(b.f0[b.voiced])
    assert abs(mb / ma - 1) < 0.03


def test_band_and_length_checks():
    with pytest.raises(ValueError):
        track_pitch(tone(200), 50, band=(30, 400))
    with pytest.raises(ValueError):
        track_pitch(tone(200), 50, band=(60, 5000))
    with pytest.raises(InputTooShort):
        track_pitch(Waveform(np.zeros(100), 16000), 50)


def test_frame_length_matches_features():
    w = tone(150, 2.0)
    assert len(track_pitch(w, 50, frame_length=400)) == 1 + (32000 - 400) // 320


def test_speaker_stats_examples():
    s = speaker_stats([PitchTrack.from_f0(np.full(20, 200.0), 50)])
    assert s.mean_log_f0 == pytest.approx(np.log(200)) and s.std_log_f0 == pytest.approx(0, abs=1e-12)
    s2 = speaker_stats([PitchTrack.from_f0([100.0, 400.0] * 10, 50)])
    assert s2.mean_log_f0 == pytest.approx(np.log(200))
    mixed = np.array([100.0, 0, 0, 150, 0, 200, 300, 0, 120, 130, 140, 160, 170, 180])
    s3 = speaker_stats([PitchTrack.from_f0(mixed, 50)])
    v = np.log(mixed[mixed > 0])
    assert s3.mean_log_f0 == pytest.approx(v.mean()) and s3.n_voiced_frames == len(v)
    with pytest.raises(InsufficientVoicedFrames):
        speaker_stats([PitchTrack.from_f0(np.full(9, 200.0), 50)])


def test_per_speaker_normalization():
    s = SpeakerStats(np.log(180.0), 0.1, 100)
    t = PitchTrack.from_f0(np.full(10, 180.0), 50)
    assert np.allclose(normalize_per_speaker(t, s).values, 0)
    f0 = np.array([100.0, 0.0, 250.0, 300.0])
    a = normalize_per_speaker(PitchTrack.from_f0(f0, 50), s)
    b = normalize_per_speaker(PitchTrack.from_f0(2 * f0, 50), s)
    assert np.allclose(b.values[a.voiced] - a.values[a.voiced], np.log(2))
    assert np.array_equal(a.voiced, [True, False, True, True]) and a.normalized


def test_prefix_normalization():
    t = PitchTrack.from_f0(np.full(100, 200.0), 50)
    assert np.allclose(normalize_prefix(t, 0.5).values, 0)
    jump = PitchTrack.from_f0(np.r_[np.full(50, 200.0), np.full(50, 400.0)], 50)
    assert np.allclose(normalize_prefix(jump, 1.0).values[50:], np.log(2))
    with pytest.raises(InsufficientVoicedFrames):
        normalize_prefix(PitchTrack.from_f0(np.r_[np.zeros(50), np.full(50, 200.0)], 50), 1.0)


@settings(max_examples=50, deadline=None)
@given(f0=st.floats(60, 400), n=st.integers(10, 80), seconds=st.floats(0.2, 1.0))
def test_modes_agree_on_stationary_tracks(f0, n, seconds):
    t = PitchTrack.from_f0(np.full(n, f0), 50)
    if int(round(seconds * 50)) < 5:
        return
    a = normalize_per_speaker(t, speaker_stats([t]))
    b = normalize_prefix(t, seconds)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.voiced, b.voiced)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(60, 400)), min_size=12, max_size=60))
def test_normalization_keeps_mask(f0):
    t = PitchTrack.from_f0(f0, 50)
    if t.voiced.sum() < 10:
        return
    assert np.array_equal(normalize_per_speaker(t, speaker_stats([t])).voiced, t.voiced)


def test_jsonl_roundtrip(tmp_path):
    t = normalize_per_speaker(PitchTrack.from_f0([100.0, 0.0, 200.0], 50), SpeakerStats(np.log(150), 0, 10))
    dump_jsonl(t, tmp_path / "p.jsonl")
    back = load_jsonl(tmp_path / "p.jsonl", 50)
    assert np.array_equal(back.voiced, t.voiced) and np.allclose(back.values, t.values)
