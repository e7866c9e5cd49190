from __future__ import annotations

import json

import numpy as np
import pytest

from unit_codec.audio import write_wav
from unit_codec.codec import decode_bitstream, read_bitstream
from unit_codec.pipeline import (PipelineConfig, encode_waveform, preprocess, read_manifest, speaker_of,
                                 train_codebook)
from unit_codec.quantizer import save_codebook
from unit_codec.streams import read_dump
from unit_codec.synth import write_corpus


@pytest.fixture()
def corpus_dir(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path / "wav")
    return tmp_path / "wav"


@pytest.fixture()
def codebook_path(tmp_path, small_codebook):
    p = tmp_path / "cb.tlcb"
    save_codebook(small_codebook, p)
    return p


def test_config_load_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"K": 50, "workers": 2, "normalization": "prefix"}))
    pc = PipelineConfig.load(p, workers=3, K=None)
    assert pc.K == 50 and pc.workers == 3 and pc.normalization == "prefix"
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError):
        PipelineConfig.load(p)
    with pytest.raises(ValueError):
        PipelineConfig(workers=0)
    with pytest.raises(ValueError):
        PipelineConfig(preset="hubert")


def test_speaker_regex():
    assert speaker_of("/a/b/spk3_007.wav", r"^([^_]+)_") == "spk3"
    assert speaker_of("plain.wav", r"^([^_]+)_") is None


def test_preprocess_outputs(tmp_path, corpus_dir, codebook_path, small_corpus):
    pc = PipelineConfig(codebook=str(codebook_path), normalization="per-speaker", coding_mode="entropy")
    res = preprocess(corpus_dir, pc, tmp_path / "out")
    out = tmp_path / "out"
    recs = read_manifest(out / "manifest.jsonl")
    assert len(recs) == len(small_corpus) and all(r.status == "ok" for r in recs)
    assert {r.speaker_id for r in recs} == {"spk0", "spk1"}
    assert (out / "speaker_stats.json").exists() and (out / "unigram.json").exists()
    dump = read_dump(out / "streams.txt", 16, 50)
    assert len(dump) == len(recs)
    from unit_codec.codec import UnigramModel
    m = UnigramModel.from_json((out / "unigram.json").read_text())
    first = recs[0]
    d = decode_bitstream(read_bitstream(out / first.outputs["bitstream"]), m)
    assert np.array_equal(d.units, dump[0].units) and np.array_equal(d.durations, dump[0].durations)
    assert any(e.has_pitch for e in res.utterances.values())


def test_units_match_features_frame_count(small_corpus, small_codebook, codebook_path, cfg50):
    pc = PipelineConfig(codebook=str(codebook_path))
    w = small_corpus[0].wave
    e = encode_waveform(w, small_codebook, pc)
    assert e.total_frames == cfg50.n_frames(len(w))


def test_corrupt_file_isolated(tmp_path, corpus_dir, codebook_path):
    (corpus_dir / "spk9_bad.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunk")
    short_path = corpus_dir / "spk9_short.wav"
    from unit_codec.audio import Waveform
    write_wav(Waveform(np.zeros(50), 16000), short_path)
    res = preprocess(corpus_dir, PipelineConfig(codebook=str(codebook_path)), tmp_path / "out")
    failed = [r for r in res.manifest if r.status != "ok"]
    assert {r.audio_path.split("/")[-1] for r in failed} == {"spk9_bad.wav", "spk9_short.wav"}
    assert all(r.reason for r in failed) and res.n_failed == 2


def test_train_codebook_deterministic(corpus_dir):
    inputs = sorted(corpus_dir.glob("*.wav"))
    pc = PipelineConfig(K=8, frame_cap=300, max_iters=20)
    a, b = train_codebook(inputs, pc), train_codebook(inputs, pc)
    assert a == b and a.training_meta["n_points"] == 300
