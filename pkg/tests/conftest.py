from __future__ import annotations

import numpy as np
import pytest

from unit_codec.audio import Waveform
from unit_codec.features import PRESETS, log_mel
from unit_codec.quantizer import kmeans_train
from unit_codec.synth import synth_corpus

SR = 16000


def tone(freq: float, seconds: float = 1.0, amp: float = 0.5, sr: int = SR) -> Waveform:
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


@pytest.fixture(scope="session")
def cfg50():
    return PRESETS["hubert-like-50hz"]


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(n_speakers=2, per_speaker=4, seconds=1.0, seed=7)


@pytest.fixture(scope="session")
def small_codebook(small_corpus, cfg50):
    frames = np.concatenate([log_mel(it.wave, cfg50).frames for it in small_corpus])
    return kmeans_train(frames, 16, max_iters=30, seed=0, fingerprint=cfg50.fingerprint(),
                        extra_meta={"feature_config": cfg50.to_dict()})


ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{status}] criterion {k:>2}: {text}")
