"""Waveform container, RIFF/WAVE reading and writing, and resampling."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, UnsupportedFormat

log = logging.getLogger(__name__)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

RESAMPLE_HALF_TAPS = 16  # 32 taps per output phase
RESAMPLE_KAISER_BETA = 8.6


@dataclass(frozen=True)
class Waveform:
    """Mono float waveform with amplitudes in [-1, 1].

    Out-of-range input is clamped at construction; the number of clamped
    samples is kept in ``n_clipped``.
    """

    samples: np.ndarray
    sample_rate: int
    n_clipped: int = field(default=0, compare=False)

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        x = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        over = int(np.count_nonzero(np.abs(x) > 1.0))
        if over:
            log.warning("clamping %d out-of-range samples to [-1, 1]", over)
            x = np.clip(x, -1.0, 1.0)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "n_clipped", self.n_clipped + over)

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    __hash__ = None

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def _parse_fmt(chunk: bytes) -> tuple[int, int, int, int]:
    if len(chunk) < 16:
        raise CorruptHeader("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(chunk) < 40:
            raise CorruptHeader("extensible fmt chunk too short")
        # first two bytes of the SubFormat GUID carry the base format tag
        tag = struct.unpack("<H", chunk[24:26])[0]
    if channels < 1 or rate < 1:
        raise CorruptHeader(f"bad channel count {channels} or rate {rate}")
    if block_align != channels * (bits // 8):
        raise CorruptHeader("block_align inconsistent with channels and bit depth")
    return tag, channels, rate, bits


def read_wav(path: str | Path) -> Waveform:
    """Read a PCM16, PCM32 or float32 WAV file and mix it down to mono.

    Integer PCM is divided by 2**(bits-1), so full-scale 16-bit 32767 maps
    to 32767/32768.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = _parse_fmt(body)
        elif cid == b"data":
            if len(body) < size:
                raise CorruptHeader(f"{path}: data chunk truncated ({len(body)} of {size} bytes)")
            pcm = body
            if fmt is not None:
                break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise CorruptHeader(f"{path}: missing fmt chunk")
    if pcm is None:
        raise CorruptHeader(f"{path}: missing data chunk")

    tag, channels, rate, bits = fmt
    if tag == WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(pcm, dtype="<i2", count=len(pcm) // 2).astype(np.float64) / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 32:
        x = np.frombuffer(pcm, dtype="<i4", count=len(pcm) // 4).astype(np.float64) / 2147483648.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(pcm, dtype="<f4", count=len(pcm) // 4).astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise CorruptHeader(f"{path}: non-finite float samples")
    else:
        raise UnsupportedFormat(f"{path}: format tag {tag:#x} with {bits} bits is not supported")
    n = len(x) // channels
    x = x[: n * channels].reshape(n, channels).mean(axis=1)
    return Waveform(x, rate)


def write_wav(w: Waveform, path: str | Path) -> None:
    """Write ``w`` as a canonical 44-byte-header PCM16 WAV file."""
    q = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, WAVE_FORMAT_PCM, 1, w.sample_rate, w.sample_rate * 2, 2, 16,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def _kaiser(x: np.ndarray, half_width: float, beta: float) -> np.ndarray:
    r = np.clip(x / half_width, -1.0, 1.0)
    return np.i0(beta * np.sqrt(1.0 - r * r)) / np.i0(beta)


def resample(w: Waveform, target_rate: int, chunk: int = 8192) -> Waveform:
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    The kernel spans 16 zero crossings of the low-pass on each side, so each
    output sample is a 32-tap dot product at the lower of the two rates.
    Output length is ``round(len * target / source)``.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    n_in = len(w.samples)
    n_out = int(round(n_in * target_rate / w.sample_rate))
    if n_in == 0 or n_out == 0:
        return Waveform(np.zeros(n_out), target_rate)

    step = Fraction(w.sample_rate, target_rate)
    cutoff = min(1.0, target_rate / w.sample_rate)
    half_width = RESAMPLE_HALF_TAPS / cutoff
    span = int(np.ceil(half_width))
    offsets = np.arange(-span + 1, span + 1)
    x = w.samples
    out = np.empty(n_out)
    for start in range(0, n_out, chunk):
        idx = np.arange(start, min(start + chunk, n_out))
        # exact rational positions avoid drift over long signals
        num = idx * step.numerator
        base = num // step.denominator
        frac = (num - base * step.denominator) / step.denominator
        taps = base[:, None] + offsets[None, :]
        dist = frac[:, None] - offsets[None, :]
        h = cutoff * np.sinc(cutoff * dist) * _kaiser(dist, half_width, RESAMPLE_KAISER_BETA)
        valid = (taps >= 0) & (taps < n_in)
        vals = np.where(valid, x[np.clip(taps, 0, n_in - 1)], 0.0)
        out[idx] = np.sum(vals * h, axis=1)
    return Waveform(np.clip(out, -1.0, 1.0), target_rate)
