from __future__ import annotations

import dataclasses
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.fft import idct

from unit_codec.audio import Waveform
from unit_codec.errors import BadMagic, DegenerateBand, InputTooShort, NonFiniteEntry, TruncatedFile, VersionMismatch
from unit_codec.features import (LOG_FLOOR, PRESETS, FeatureConfig, FeatureSequence, export_features,
                                 import_features, log_mel, mel_filterbank, mfcc, stft)

from conftest import tone


def test_presets(cfg50):
    assert cfg50.hop == 320 and cfg50.hop * cfg50.frame_rate == cfg50.sample_rate
    assert PRESETS["cpc-like-100hz"].hop == 160


def test_dc_energy_in_bin_zero():
    # a Hann window's own spectrum spans bins 0 and +-1, so bin 1 holds exactly half of bin 0
    cfg = FeatureConfig(n_fft=512, window=512, frame_rate=50)
    spec = np.abs(stft(Waveform(np.ones(4000), 16000), cfg))
    assert np.allclose(spec[:, 1], 0.5 * spec[:, 0])
    assert np.all(spec[:, 2:] < 1e-6 * spec[:, :1])


def test_sine_peak_bin():
    cfg = FeatureConfig(n_fft=1024)
    spec = np.abs(stft(tone(1000), cfg))
    assert np.all(np.argmax(spec, axis=1) == 64)


def test_zero_input(cfg50):
    z = Waveform(np.zeros(4000), 16000)
    assert not np.abs(stft(z, cfg50)).any()
    assert np.all(log_mel(z, cfg50).frames == np.log(LOG_FLOOR))


def test_too_short(cfg50):
    with pytest.raises(InputTooShort):
        stft(Waveform(np.zeros(399), 16000), cfg50)


def test_filterbank_shape_and_coverage(cfg50):
    fb = mel_filterbank(cfg50)
    assert fb.shape == (80, 257) and np.all(fb >= 0) and np.all(fb.sum(axis=1) > 0)
    for row in fb:
        nz = np.flatnonzero(row)
        assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1))
    centres = [np.argmax(r) for r in fb]
    assert np.all(np.diff(centres) >= 0)
    interior = fb.sum(axis=0)[1:-1]
    assert np.all(interior > 0)


def test_degenerate_band():
    with pytest.raises(DegenerateBand):
        mel_filterbank(FeatureConfig(n_fft=512, n_mels=256))


def test_louder_increases_every_entry(cfg50):
    w = tone(500)
    a = log_mel(w, cfg50).frames
    b = log_mel(Waveform(w.samples * 1.9, 16000), cfg50).frames
    assert np.all(b > a)


def test_frame_count_five_seconds(cfg50):
    f = log_mel(Waveform(np.zeros(80000), 16000), cfg50)
    assert len(f) == 1 + (80000 - 400) // 320 and f.dim == 80
    assert len(f) * cfg50.hop <= 80000 and f.frame_rate == 50


def test_mfcc_constant_and_zero(cfg50):
    cfg = dataclasses.replace(cfg50, feature_kind="mfcc", n_mfcc=13)
    c = mfcc(Waveform(np.zeros(1000), 16000), cfg).frames
    assert np.allclose(c[:, 0], np.sqrt(80) * np.log(LOG_FLOOR))
    assert np.allclose(c[:, 1:], 0, atol=1e-9)


def test_mfcc_full_inverts(cfg50):
    cfg = dataclasses.replace(cfg50, feature_kind="mfcc", n_mfcc=80)
    w = Waveform(np.random.default_rng(1).normal(0, 0.1, 8000), 16000)
    back = idct(mfcc(w, cfg).frames, type=2, norm="ortho", axis=1)
    assert np.max(np.abs(back - log_mel(w, cfg50).frames)) < 1e-6


def test_shift_by_hop(cfg50):
    x = np.random.default_rng(2).normal(0, 0.1, 16000)
    a = log_mel(Waveform(x, 16000), cfg50).frames
    b = log_mel(Waveform(x[cfg50.hop:], 16000), cfg50).frames
    assert np.max(np.abs(a[1:1 + len(b)] - b)) < 1e-5


def test_deterministic(cfg50):
    w = tone(333)
    assert np.array_equal(log_mel(w, cfg50).frames, log_mel(w, cfg50).frames)


def test_tlft_known_bytes(tmp_path):
    p = tmp_path / "m.tlft"
    p.write_bytes(struct.pack("<4sIIIf", b"TLFT", 1, 2, 3, 50.0) + np.arange(1, 7, dtype="<f4").tobytes())
    f = import_features(p)
    assert f.frames.tolist() == [[1, 2, 3], [4, 5, 6]] and f.frame_rate == 50.0


def test_tlft_roundtrip_and_errors(tmp_path, cfg50):
    f = log_mel(tone(200, 0.3), cfg50)
    f32 = FeatureSequence(f.frames.astype(np.float32), f.frame_rate, f.fingerprint, f.provenance)
    p = tmp_path / "f.tlft"
    export_features(f32, p)
    g = import_features(p)
    assert np.array_equal(g.frames, f32.frames) and g.fingerprint == f.fingerprint
    blob = p.read_bytes()
    (tmp_path / "magic.tlft").write_bytes(b"XXXX" + blob[4:])
    (tmp_path / "ver.tlft").write_bytes(blob[:4] + struct.pack("<I", 2) + blob[8:])
    (tmp_path / "short.tlft").write_bytes(blob[:40])
    nan = bytearray(blob)
    nan[20:24] = struct.pack("<f", float("nan"))
    (tmp_path / "nan.tlft").write_bytes(bytes(nan))
    for name, err in [("magic", BadMagic), ("ver", VersionMismatch), ("short", TruncatedFile), ("nan", NonFiniteEntry)]:
        with pytest.raises(err):
            import_features(tmp_path / f"{name}.tlft")


@settings(max_examples=25, deadline=None)
@given(n=st.integers(400, 5000), preset=st.sampled_from(sorted(PRESETS)))
def test_frame_formula(n, preset):
    cfg = PRESETS[preset]
    f = log_mel(Waveform(np.zeros(n), 16000), cfg)
    assert len(f) == 1 + (n - cfg.window) // cfg.hop == cfg.n_frames(n)
