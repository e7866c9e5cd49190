"""F0 tracking (YIN-style) and the two pitch-normalization modes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import Waveform
from .errors import InputTooShort, InsufficientVoicedFrames

DEFAULT_BAND = (60.0, 400.0)
DEFAULT_THRESHOLD = 0.15
MIN_SPEAKER_VOICED = 10
MIN_PREFIX_VOICED = 5

TRACKER = "yin-cmndf"


@dataclass(frozen=True)
class PitchTrack:
    """Per-frame pitch with an explicit voicing mask.

    For raw tracks ``values`` holds F0 in Hz (0.0 where unvoiced); for
    normalized tracks it holds log(f0) minus a reference log-mean, and the
    values under unvoiced frames carry no meaning.
    """

    values: np.ndarray
    voiced: np.ndarray
    frame_rate: float
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        m = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if v.shape != m.shape:
            raise ValueError("values and voiced mask differ in length")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "voiced", m)

    @classmethod
    def from_f0(cls, f0, frame_rate: float) -> "PitchTrack":
        f0 = np.asarray(f0, dtype=np.float64)
        voiced = f0 > 0
        return cls(np.where(voiced, f0, 0.0), voiced, frame_rate)

    def __len__(self):
        return len(self.values)

    @property
    def f0(self) -> np.ndarray:
        if self.normalized:
            raise ValueError("normalized track has no F0 in Hz")
        return np.where(self.voiced, self.values, 0.0)


@dataclass(frozen=True)
class SpeakerStats:
    mean_log_f0: float
    std_log_f0: float
    n_voiced_frames: int


def _cmndf(segments: np.ndarray, tau_max: int) -> np.ndarray:
    """Cumulative-mean-normalized difference over lags 0..tau_max, per row."""
    n, span = segments.shape
    width = span - tau_max
    base = segments[:, :width]
    d = np.empty((n, tau_max + 1))
    d[:, 0] = 0.0
    for tau in range(1, tau_max + 1):
        diff = base - segments[:, tau:tau + width]
        d[:, tau] = np.einsum("ij,ij->i", diff, diff)
    out = np.ones_like(d)
    csum = np.cumsum(d[:, 1:], axis=1)
    lags = np.arange(1, tau_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:, 1:] = np.where(csum > 0, d[:, 1:] * lags / csum, 1.0)
    return out


def _pick_lag(row: np.ndarray, lo: int, hi: int, threshold: float) -> float | None:
    """Refined period in samples, or None when the frame is unvoiced.

    Voiced iff the minimum over [lo, hi] is below ``threshold``. The chosen
    dip is the first one that crosses the threshold, followed down to its
    local minimum; this is what keeps the tracker off period multiples.
    """
    seg = row[lo:hi + 1]
    if seg.min() >= threshold:
        return None
    i = int(np.flatnonzero(seg < threshold)[0])
    while i + 1 < len(seg) and seg[i + 1] < seg[i]:
        i += 1
    tau = lo + i
    if lo < tau < hi:
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        den = a - 2.0 * b + c
        if den > 0:
            return tau + 0.5 * (a - c) / den
    return float(tau)


def track_pitch(w: Waveform, frame_rate: float, band: tuple[float, float] = DEFAULT_BAND,
                threshold: float = DEFAULT_THRESHOLD, frame_length: int | None = None) -> PitchTrack:
    """Estimate F0 per frame.

    Frame ``t`` is centred on sample ``t * hop + frame_length / 2``, matching
    a feature extractor whose analysis window is ``frame_length`` samples
    (default ``2 * hop``), so both produce ``1 + (N - frame_length) // hop``
    frames.
    """
    f_lo, f_hi = band
    sr = w.sample_rate
    if f_lo < 40 or f_hi > sr / 4 or f_lo >= f_hi:
        raise ValueError(f"pitch band {band} must satisfy 40 <= lo < hi <= sample_rate/4")
    hop = sr / frame_rate
    if abs(hop - round(hop)) > 1e-9:
        raise ValueError(f"frame_rate {frame_rate} does not divide sample_rate {sr}")
    hop = int(round(hop))
    frame_length = 2 * hop if frame_length is None else int(frame_length)
    x = w.samples
    if len(x) < frame_length:
        raise InputTooShort(f"{len(x)} samples is shorter than one {frame_length}-sample frame")
    n_frames = 1 + (len(x) - frame_length) // hop

    tau_min = max(2, int(math.floor(sr / f_hi)))
    tau_max = int(math.ceil(sr / f_lo))
    span = 2 * tau_max
    centres = np.arange(n_frames) * hop + frame_length // 2
    starts = centres - tau_max
    pad = np.concatenate([np.zeros(tau_max), x, np.zeros(span)])
    idx = (starts + tau_max)[:, None] + np.arange(span)[None, :]
    segments = pad[idx]

    f0 = np.zeros(n_frames)
    cm = _cmndf(segments, tau_max)
    for t in range(n_frames):
        lag = _pick_lag(cm[t], tau_min, tau_max, threshold)
        if lag is not None:
            est = sr / lag
            if f_lo <= est <= f_hi:
                f0[t] = est
    return PitchTrack.from_f0(f0, frame_rate)


def _shifted_mean(v: np.ndarray) -> float:
    # exact for constant input, so equal-mean references give identical outputs
    return float(v[0] + np.mean(v - v[0]))


def speaker_stats(tracks: Iterable[PitchTrack]) -> SpeakerStats:
    logs = [np.log(t.values[t.voiced]) for t in tracks]
    v = np.concatenate(logs) if logs else np.zeros(0)
    if len(v) < MIN_SPEAKER_VOICED:
        raise InsufficientVoicedFrames(f"{len(v)} voiced frames, need at least {MIN_SPEAKER_VOICED}")
    return SpeakerStats(_shifted_mean(v), float(v.std()), int(len(v)))


def _subtract_log_mean(t: PitchTrack, mean_log_f0: float) -> PitchTrack:
    if t.normalized:
        raise ValueError("track is already normalized")
    vals = np.zeros(len(t))
    vals[t.voiced] = np.log(t.values[t.voiced]) - mean_log_f0
    return PitchTrack(vals, t.voiced.copy(), t.frame_rate, normalized=True)


def normalize_per_speaker(t: PitchTrack, s: SpeakerStats) -> PitchTrack:
    return _subtract_log_mean(t, s.mean_log_f0)


def normalize_prefix(t: PitchTrack, prefix_seconds: float) -> PitchTrack:
    """Normalize by the mean log-F0 of the first ``prefix_seconds`` only."""
    n = int(round(prefix_seconds * t.frame_rate))
    head = t.voiced[:n]
    if head.sum() < MIN_PREFIX_VOICED:
        raise InsufficientVoicedFrames(
            f"prefix of {prefix_seconds}s has {int(head.sum())} voiced frames, need {MIN_PREFIX_VOICED}")
    mean = _shifted_mean(np.log(t.values[:n][head]))
    return _subtract_log_mean(t, mean)


def dump_jsonl(t: PitchTrack, path: str | Path) -> None:
    with open(path, "w") as fh:
        for i, (v, m) in enumerate(zip(t.values, t.voiced)):
            fh.write(json.dumps({"frame": i, "voiced": bool(m), "value": float(v) if m else None}) + "\n")


def load_jsonl(path: str | Path, frame_rate: float, normalized: bool = True) -> PitchTrack:
    vals, mask = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            mask.append(rec["voiced"])
            vals.append(rec["value"] if rec["voiced"] else 0.0)
    return PitchTrack(vals, mask, frame_rate, normalized=normalized)


def voiced_fraction(tracks: Sequence[PitchTrack]) -> float:
    n = sum(len(t) for t in tracks)
    return sum(int(t.voiced.sum()) for t in tracks) / n if n else 0.0
