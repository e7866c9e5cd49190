from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unit_codec.codec import (PITCH_STEP, Bitstream, BitReader, BitWriter, HuffmanCode, UnigramModel,
                              bitrate_entropy, bitrate_fixed, bitrate_report, decode_bitstream, elias_gamma_read,
                              elias_gamma_write, encode_bitstream, entropy_bits, fit_unigram, fixed_width,
                              huffman_bits, read_bitstream, write_bitstream)
from unit_codec.errors import BadMagic, EmptyCorpus, ModelFingerprintMismatch, ModelMismatch, TruncatedPayload
from unit_codec.streams import EncodedUtterance


def utt(units, K, durations=None, pitch=None, voiced=None):
    n = len(units)
    return EncodedUtterance(units, durations or [1] * n, pitch or [0.0] * n, voiced or [False] * n, 50, K)


@st.composite
def utterances(draw, max_K=600):
    K = draw(st.integers(2, max_K))
    n = draw(st.integers(0, 40))
    units = []
    for _ in range(n):
        choices = [u for u in range(min(K, 50)) if not units or u != units[-1]]
        units.append(draw(st.sampled_from(choices)))
    durs = draw(st.lists(st.integers(1, 300), min_size=n, max_size=n))
    pitch = draw(st.lists(st.floats(-1.5, 1.5), min_size=n, max_size=n))
    voiced = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    return EncodedUtterance(units, durs, pitch, voiced, 50, K)


def test_fixed_width():
    assert [fixed_width(k) for k in (2, 4, 5, 50, 100, 200, 256, 257, 500)] == [1, 2, 3, 6, 7, 8, 8, 9, 9]


def test_unigram_formula():
    m = fit_unigram([utt([0], 2, durations=[1])] * 4, smoothing_k=0.5)
    assert np.allclose(m.probs, [4.5 / 5, 0.5 / 5])
    uni = fit_unigram([utt([0, 1, 2, 3], 4)], smoothing_k=0.5)
    assert np.allclose(uni.probs, 0.25)
    tokens = [3, 1, 0, 1, 3, 1, 2, 1, 0, 1]
    hand = np.array([2, 5, 1, 2]) / 10
    m0 = fit_unigram([utt(tokens, 4)], smoothing_k=1e-9)
    assert np.allclose(m0.probs, hand, atol=1e-8)
    with pytest.raises(EmptyCorpus):
        fit_unigram([])
    with pytest.raises(ValueError):
        fit_unigram([utt([0], 2)], smoothing_k=0)


def test_bitrate_formulas():
    assert bitrate_fixed(25, 1.0, 100) == 175
    assert bitrate_fixed(0, 1.0, 100) == 0
    assert bitrate_fixed(13, 2.5, 256) == 8 * 13 / 2.5
    uni = UnigramModel(np.full(50, 1 / 50), np.zeros(50), 0)
    assert abs(bitrate_entropy(40, 2.0, uni) - 20 * np.log2(50)) < 1e-9
    assert bitrate_entropy(100, 2.0, UnigramModel(np.array([0.5, 0.25, 0.25]), np.zeros(3), 0)) == 75
    skew = fit_unigram([utt([0], 2)] * 1000, smoothing_k=1e-12)
    assert bitrate_entropy(100, 1.0, skew) < 1e-6
    with pytest.raises(ValueError):
        bitrate_fixed(1, 0.0, 10)


def test_fixed_unit_payload_bits():
    b = encode_bitstream(utt([0, 1, 2], 4))
    assert b.stream_bits["units"] == 6 and b.stream_bits["pitch"] == 0
    assert b.stream_bits["durations"] == 3 and len(b.payload) == 2


def test_bit_order_msb_first():
    w = BitWriter()
    w.write(0b101, 3)
    assert w.getvalue() == bytes([0b10100000])
    r = BitReader(bytes([0b10100000]))
    assert r.read(3) == 0b101


def test_elias_gamma_small_codes():
    w = BitWriter()
    for x in (1, 2, 3, 4, 17):
        elias_gamma_write(w, x)
    assert w.bits == 1 + 3 + 3 + 5 + 9
    r = BitReader(w.getvalue())
    assert [elias_gamma_read(r) for _ in range(5)] == [1, 2, 3, 4, 17]


def test_huffman_prefix_free_and_kraft():
    p = np.random.default_rng(0).dirichlet(np.ones(30))
    h = HuffmanCode(p)
    assert abs(np.sum(2.0 ** -h.lengths) - 1) < 1e-12
    words = [format(int(c), f"0{int(l)}b") for c, l in zip(h.codes, h.lengths)]
    for a in words:
        assert not any(b != a and b.startswith(a) for b in words)


def test_huffman_beats_fixed_on_skewed_corpus():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.full(64, 0.2))
    tokens = rng.choice(64, 1000, p=p)
    m = UnigramModel(p / p.sum(), np.zeros(64), 0)
    assert huffman_bits(tokens, m) <= 1000 * fixed_width(64)


def test_header_layout():
    b = encode_bitstream(utt([1, 2], 5))
    raw = b.to_bytes()
    assert raw[:4] == b"TLUC" and raw[4] == 1 and raw[5] == 0 and raw[6] == 0
    assert int.from_bytes(raw[7:9], "little") == 5
    assert int.from_bytes(raw[13:17], "little") == 2 and raw[17:25] == b"\0" * 8


def test_decode_errors(tmp_path):
    e = utt([0, 1, 0, 2], 3, durations=[3, 1, 2, 9])
    m = fit_unigram([e])
    b = encode_bitstream(e, m)
    raw = b.to_bytes()
    with pytest.raises(BadMagic):
        Bitstream.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TruncatedPayload):
        decode_bitstream(Bitstream.from_bytes(raw[:-1]), m)
    other = fit_unigram([e], smoothing_k=2.0)
    with pytest.raises(ModelFingerprintMismatch):
        decode_bitstream(b, other)
    with pytest.raises(ModelFingerprintMismatch):
        decode_bitstream(b)
    with pytest.raises(ModelMismatch):
        encode_bitstream(e, fit_unigram([utt([0, 1], 4)]))
    write_bitstream(b, tmp_path / "x.tluc")
    assert decode_bitstream(read_bitstream(tmp_path / "x.tluc"), m) == decode_bitstream(b, m)


def test_pitch_clamped_flag():
    e = utt([0, 1], 2, pitch=[2.5, -0.1], voiced=[True, True])
    b = encode_bitstream(e)
    assert b.pitch_clamped == 1 and b.flags & 0x02
    d = decode_bitstream(Bitstream.from_bytes(b.to_bytes()))
    assert d.pitch[0] == pytest.approx(1.5)


@settings(max_examples=150, deadline=None)
@given(utterances(), st.booleans())
def test_roundtrip_property(e, entropy):
    m = fit_unigram([e]) if entropy else None
    d = decode_bitstream(Bitstream.from_bytes(encode_bitstream(e, m).to_bytes()), m)
    assert np.array_equal(d.units, e.units) and np.array_equal(d.durations, e.durations)
    assert np.array_equal(d.voiced, e.voiced)
    assert np.all(np.abs(d.pitch - e.pitch) <= PITCH_STEP)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**31 - 1))
def test_gibbs_bound(K, seed):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 50, K)
    probs = (counts + 0.5) / (counts.sum() + 0.5 * K)
    m = UnigramModel(probs, counts, int(counts.sum()))
    assert bitrate_entropy(100, 3.0, m) <= bitrate_fixed(100, 3.0, K) + 1e-9


def test_report_consistency():
    rng = np.random.default_rng(0)
    utts = []
    for _ in range(5):
        u = [0]
        while len(u) < 60:
            x = int(rng.integers(20))
            if x != u[-1]:
                u.append(x)
        utts.append(utt(u, 20, durations=list(rng.integers(1, 5, 60))))
    rep = bitrate_report(utts, None, [2.0] * 5)
    assert rep.n_tokens == 300 and rep.audio_seconds == 10
    assert rep.entropy_bits_per_sec <= rep.fixed_bits_per_sec + 1e-9
    assert rep.streams["units"] >= rep.entropy_bits_per_sec - 1e-9
    assert rep.actual_bits_per_sec >= rep.streams["units"]
    with pytest.raises(EmptyCorpus):
        bitrate_report([], None, [])
