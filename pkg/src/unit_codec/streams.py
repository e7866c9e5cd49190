"""Run-length encoded unit / duration / pitch streams.

An utterance is held as three aligned segment-level streams: deduplicated
unit ids, the number of frames each unit lasted, and the mean normalized
pitch of its voiced frames (or an unvoiced flag).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import IncompatibleRates, LengthMismatch
from .pitch import PitchTrack
from .quantizer import UnitSequence

UNVOICED_TOKEN = "~"


@dataclass(frozen=True)
class EncodedUtterance:
    units: np.ndarray
    durations: np.ndarray
    pitch: np.ndarray
    voiced: np.ndarray
    frame_rate: float
    K: int

    def __post_init__(self):
        u = np.asarray(self.units, dtype=np.int64).reshape(-1)
        d = np.asarray(self.durations, dtype=np.int64).reshape(-1)
        p = np.asarray(self.pitch, dtype=np.float64).reshape(-1)
        v = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if not len(u) == len(d) == len(p) == len(v):
            raise LengthMismatch("units, durations and pitch streams differ in length")
        if len(u):
            if u.min() < 0 or u.max() >= self.K:
                raise ValueError(f"unit ids must lie in [0, {self.K})")
            if d.min() < 1:
                raise ValueError("durations must be >= 1")
            if np.any(u[1:] == u[:-1]):
                raise ValueError("adjacent units must differ in a deduplicated stream")
        p = np.where(v, p, 0.0)
        for name, arr in (("units", u), ("durations", d), ("pitch", p), ("voiced", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.units)

    @property
    def total_frames(self) -> int:
        return int(self.durations.sum())

    @property
    def has_pitch(self) -> bool:
        return bool(self.voiced.any())

    def __eq__(self, other):
        if not isinstance(other, EncodedUtterance):
            return NotImplemented
        return (self.K == other.K and self.frame_rate == other.frame_rate
                and np.array_equal(self.units, other.units)
                and np.array_equal(self.durations, other.durations)
                and np.array_equal(self.voiced, other.voiced)
                and np.array_equal(self.pitch, other.pitch))

    __hash__ = None


def run_lengths(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start index and length of each maximal run."""
    u = np.asarray(u)
    if len(u) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    starts = np.flatnonzero(np.concatenate([[True], u[1:] != u[:-1]]))
    lengths = np.diff(np.append(starts, len(u)))
    return starts, lengths


def dedup(u: UnitSequence, p: PitchTrack | None = None) -> EncodedUtterance:
    """Collapse runs of repeated units, keeping run lengths as durations.

    Segment pitch is the mean over the run's voiced frames; a run with no
    voiced frame is flagged unvoiced.
    """
    units = u.units
    starts, lengths = run_lengths(units)
    n = len(starts)
    pitch = np.zeros(n)
    voiced = np.zeros(n, dtype=bool)
    if p is not None:
        if len(p) != len(units):
            raise LengthMismatch(f"pitch track has {len(p)} frames, unit stream has {len(units)}")
        seg = np.repeat(np.arange(n), lengths)
        m = p.voiced
        cnt = np.bincount(seg[m], minlength=n)
        tot = np.bincount(seg[m], weights=p.values[m], minlength=n)
        voiced = cnt > 0
        pitch[voiced] = tot[voiced] / cnt[voiced]
    return EncodedUtterance(units[starts], lengths, pitch, voiced, u.frame_rate, u.K)


def inflate(e: EncodedUtterance) -> tuple[UnitSequence, PitchTrack]:
    """Repeat every segment ``duration`` times; pitch is broadcast per segment."""
    units = np.repeat(e.units, e.durations)
    vals = np.repeat(e.pitch, e.durations)
    mask = np.repeat(e.voiced, e.durations)
    return UnitSequence(units, e.frame_rate, e.K), PitchTrack(vals, mask, e.frame_rate, normalized=True)


def _block_mean(values: np.ndarray, voiced: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    n_out = -(-len(values) // m)
    blk = np.arange(len(values)) // m
    cnt = np.bincount(blk[voiced], minlength=n_out)
    tot = np.bincount(blk[voiced], weights=values[voiced], minlength=n_out)
    out = np.zeros(n_out)
    ok = cnt > 0
    out[ok] = tot[ok] / cnt[ok]
    return out, ok


def align_pitch(p: PitchTrack, target_frame_rate: float, n_frames: int | None = None,
                tol: float = 1e-9) -> PitchTrack:
    """Resample a pitch track onto another frame grid.

    Rates must be related by a rational factor ``up/down``: frames are first
    replicated ``up`` times, then averaged over voiced frames in blocks of
    ``down``. When ``n_frames`` is given the result is truncated or extended
    (copying the last frame) by at most one frame to match it.
    """
    ratio = Fraction(p.frame_rate / target_frame_rate).limit_denominator(1000)
    if ratio <= 0 or abs(float(ratio) - p.frame_rate / target_frame_rate) > tol:
        raise IncompatibleRates(f"{p.frame_rate} Hz and {target_frame_rate} Hz are not rationally related")
    vals, mask = p.values, p.voiced
    if ratio.denominator > 1:
        vals = np.repeat(vals, ratio.denominator)
        mask = np.repeat(mask, ratio.denominator)
    if ratio.numerator > 1:
        vals, mask = _block_mean(vals, mask, ratio.numerator)
    if n_frames is not None:
        gap = n_frames - len(vals)
        if abs(gap) > 1:
            raise LengthMismatch(f"aligned pitch has {len(vals)} frames, expected {n_frames}")
        if gap == -1:
            vals, mask = vals[:-1], mask[:-1]
        elif gap == 1:
            if len(vals) == 0:
                vals, mask = np.zeros(1), np.zeros(1, dtype=bool)
            else:
                vals, mask = np.append(vals, vals[-1]), np.append(mask, mask[-1])
    return PitchTrack(vals, mask, target_frame_rate, normalized=p.normalized)


def format_line(e: EncodedUtterance) -> str:
    """``unit:duration:pitch`` triples, ``~`` for an unvoiced segment."""
    parts = []
    for u, d, p, v in zip(e.units, e.durations, e.pitch, e.voiced):
        parts.append(f"{u}:{d}:{repr(float(p)) if v else UNVOICED_TOKEN}")
    return " ".join(parts)


def parse_line(line: str, K: int, frame_rate: float) -> EncodedUtterance:
    units, durs, pitch, voiced = [], [], [], []
    for tok in line.split():
        try:
            u, d, p = tok.split(":")
            units.append(int(u))
            durs.append(int(d))
        except ValueError as exc:
            raise ValueError(f"malformed segment {tok!r}") from exc
        if p == UNVOICED_TOKEN:
            pitch.append(0.0)
            voiced.append(False)
        else:
            pitch.append(float(p))
            voiced.append(True)
    return EncodedUtterance(units, durs, pitch, voiced, frame_rate, K)


def write_dump(utterances: Iterable[EncodedUtterance], path: str | Path) -> None:
    with open(path, "w") as fh:
        for e in utterances:
            fh.write(format_line(e) + "\n")


def read_dump(path: str | Path, K: int, frame_rate: float) -> list[EncodedUtterance]:
    with open(path) as fh:
        return [parse_line(line, K, frame_rate) for line in fh]
