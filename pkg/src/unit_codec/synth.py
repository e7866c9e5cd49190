"""Synthetic speech-like corpora for tests, experiments and CLI smoke runs.

A small source-filter generator: glottal pulse trains (or noise for
fricatives) shaped by a speaker-specific spectral tilt and passed through
three formant resonators per phone. Speakers differ in mean F0 and tilt.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import Waveform, write_wav

# (F1, F2, F3) in Hz; None marks a fricative with a noise band centre instead
PHONES = {
    "a": (730, 1090, 2440),
    "i": (270, 2290, 3010),
    "u": (300, 870, 2240),
    "e": (530, 1840, 2480),
    "o": (570, 840, 2410),
    "ae": (660, 1720, 2410),
    "er": (490, 1350, 1690),
    "uh": (520, 1190, 2390),
    "m": (250, 1100, 2300),
    "s": None,
    "sh": None,
    "f": None,
}
FRICATIVE_BANDS = {"s": (5500, 1500), "sh": (3000, 1000), "f": (1800, 3000)}
FORMANT_BW = (80.0, 110.0, 160.0)
FORMANT_RANGES = ((250.0, 800.0), (800.0, 2400.0), (2200.0, 3200.0))
FRICATIVE_RATE = 0.2


@dataclass(frozen=True)
class Speaker:
    speaker_id: int
    f0_mean: float
    tilt: float  # pole of the one-pole source low-pass, in [0, 1)
    formant_scale: float = 1.0


def default_speakers(n: int = 4, f0_centre: float = 150.0, f0_spread: float = 100.0,
                     tilt_centre: float = 0.88, tilt_spread: float = 0.06) -> list[Speaker]:
    """``n`` speakers with evenly spaced mean F0 and (shuffled) tilt."""
    if n == 1:
        return [Speaker(0, f0_centre, tilt_centre)]
    f0s = f0_centre + f0_spread * (np.linspace(0, 1, n) - 0.5)
    tilts = tilt_centre + tilt_spread * (np.linspace(0, 1, n) - 0.5)
    return [Speaker(i, float(f0s[i]), float(tilts[(i * 3) % n])) for i in range(n)]


def _resonator(freq: float, bw: float, sr: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a  # unity gain at DC


def _ramp(n: int, sr: int) -> np.ndarray:
    k = min(n // 2, int(0.01 * sr))
    env = np.ones(n)
    if k > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(k) / k)
        env[:k] = r
        env[-k:] = r[::-1]
    return env


def synth_utterance(speaker: Speaker, rng: np.random.Generator, seconds: float = 1.5,
                    sample_rate: int = 16000, phones: list[str] | None = None) -> Waveform:
    """Random phone string rendered for ``speaker``; ~``seconds`` long.

    Without an explicit ``phones`` list, each voiced segment draws its
    formants uniformly from a continuous vowel space and roughly one segment
    in five is a fricative.
    """
    sr = sample_rate
    lead = np.zeros(int(0.08 * sr))
    pieces = [lead]
    total = len(lead)
    target = int(seconds * sr)
    f0_phase = 0.0
    slope = rng.uniform(-0.25, 0.1)
    i = 0
    while total < target - len(lead):
        if phones:
            name = phones[i % len(phones)]
            spec = PHONES[name]
        elif rng.random() < FRICATIVE_RATE:
            name = ("s", "sh", "f")[int(rng.integers(3))]
            spec = None
        else:
            name = "v"
            spec = tuple(rng.uniform(lo, hi) for lo, hi in FORMANT_RANGES)
        i += 1
        n = int(rng.uniform(0.06, 0.18) * sr)
        t = (total + np.arange(n)) / sr
        if spec is None:
            centre, bw = FRICATIVE_BANDS[name]
            b, a = _resonator(centre, bw, sr)
            seg = lfilter([1.0], a, rng.standard_normal(n)) * 0.02
        else:
            f0 = speaker.f0_mean * (1 + slope * t / seconds) * (1 + 0.03 * np.sin(2 * np.pi * 3 * t))
            f0 = f0 * np.exp(0.01 * rng.standard_normal())
            phase = f0_phase + np.cumsum(f0) / sr
            f0_phase = phase[-1] % 1.0
            src = np.diff(np.floor(np.concatenate([[phase[0] - f0[0] / sr], phase]))).clip(0, 1)
            src = lfilter([1.0 - speaker.tilt], [1.0, -speaker.tilt], src)
            src = src + 0.002 * rng.standard_normal(n)
            seg = src
            for f, bw in zip(spec, FORMANT_BW):
                b, a = _resonator(f * speaker.formant_scale, bw, sr)
                seg = lfilter(b, a, seg)
            if name == "m":
                seg *= 0.3
        pieces.append(seg * _ramp(n, sr))
        total += n
    pieces.append(np.zeros(len(lead)))
    x = np.concatenate(pieces)
    x = x + 1e-4 * rng.standard_normal(len(x))
    x *= 0.5 / max(np.max(np.abs(x)), 1e-12)
    return Waveform(x, sr)


@dataclass(frozen=True)
class CorpusItem:
    wave: Waveform
    speaker_id: int
    name: str


def synth_corpus(n_speakers: int = 4, per_speaker: int = 10, seconds: float = 1.5, seed: int = 0,
                 sample_rate: int = 16000, speakers: list[Speaker] | None = None) -> list[CorpusItem]:
    speakers = speakers or default_speakers(n_speakers)
    rng = np.random.default_rng(seed)
    items = []
    for j in range(per_speaker):
        for spk in speakers:
            dur = seconds * rng.uniform(0.8, 1.2)
            w = synth_utterance(spk, rng, dur, sample_rate)
            items.append(CorpusItem(w, spk.speaker_id, f"spk{spk.speaker_id}_{j:03d}"))
    return items


def write_corpus(items: list[CorpusItem], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for it in items:
        p = out / f"{it.name}.wav"
        write_wav(it.wave, p)
        paths.append(p)
    return paths
