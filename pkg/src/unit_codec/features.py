"""Dense frame features: STFT, mel filterbank, log-mel, MFCC, and the TLFT
feature-file format used to import features computed elsewhere."""
from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import get_window

from .audio import Waveform
from .errors import (BadMagic, DegenerateBand, InputTooShort, NonFiniteEntry,
                     TruncatedFile, VersionMismatch)

LOG_FLOOR = 1e-10

TLFT_MAGIC = b"TLFT"
TLFT_VERSION = 1
_TLFT_HEADER = struct.Struct("<4sIIIf")


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    frame_rate: int = 50
    n_fft: int = 512
    window: int = 400
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    feature_kind: str = "log-mel"  # or "mfcc"
    n_mfcc: int = 13
    normalize: bool = False  # per-utterance mean/variance normalization

    def __post_init__(self):
        if self.sample_rate % self.frame_rate:
            raise ValueError(f"frame_rate {self.frame_rate} does not divide sample_rate {self.sample_rate}")
        if self.n_fft & (self.n_fft - 1) or self.n_fft < self.window:
            raise ValueError("n_fft must be a power of two no smaller than window")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.feature_kind not in ("log-mel", "mfcc"):
            raise ValueError(f"unknown feature_kind {self.feature_kind!r}")
        if self.feature_kind == "mfcc" and not 1 <= self.n_mfcc <= self.n_mels:
            raise ValueError("n_mfcc must lie in [1, n_mels]")

    @property
    def hop(self) -> int:
        return self.sample_rate // self.frame_rate

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def dim(self) -> int:
        return self.n_mels if self.feature_kind == "log-mel" else self.n_mfcc

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()

    def n_frames(self, n_samples: int) -> int:
        """Frames that fit entirely inside ``n_samples``; no edge padding."""
        if n_samples < self.window:
            return 0
        return 1 + (n_samples - self.window) // self.hop


PRESETS = {
    "hubert-like-50hz": FeatureConfig(frame_rate=50),
    "cpc-like-100hz": FeatureConfig(frame_rate=100),
}


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float
    fingerprint: bytes = field(default=b"\0" * 32)
    provenance: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NonFiniteEntry("feature matrix has non-finite entries")
        object.__setattr__(self, "frames", f)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def frame_signal(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    n = 1 + (len(x) - window) // hop
    return np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n]


def analysis_window(window: int) -> np.ndarray:
    return get_window("hann", window, fftbins=True)


def stft(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """Complex spectrogram, shape ``(L, n_fft // 2 + 1)``.

    Frame ``t`` covers samples ``[t * hop, t * hop + window)``.
    """
    if len(w.samples) < cfg.window:
        raise InputTooShort(f"{len(w.samples)} samples is shorter than one {cfg.window}-sample window")
    frames = frame_signal(w.samples, cfg.window, cfg.hop) * analysis_window(cfg.window)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``, peak 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if len(empty):
        raise DegenerateBand(
            f"{len(empty)} of {cfg.n_mels} mel filters contain no FFT bin; "
            f"reduce n_mels or raise n_fft")
    return fb


def _normalize(f: np.ndarray) -> np.ndarray:
    if len(f) == 0:
        return f
    std = f.std(axis=0)
    return (f - f.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _native_provenance(kind: str, cfg: FeatureConfig) -> str:
    return f"native:{kind}:{cfg.fingerprint().hex()}"


def _log_mel_matrix(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    mag = np.abs(stft(w, cfg))
    return np.log(mag @ mel_filterbank(cfg).T + LOG_FLOOR)


def log_mel(w: Waveform, cfg: FeatureConfig) -> FeatureSequence:
    if cfg.feature_kind != "log-mel":
        raise ValueError("log_mel needs a config with feature_kind='log-mel'")
    f = _log_mel_matrix(w, cfg)
    if cfg.normalize:
        f = _normalize(f)
    return FeatureSequence(f, cfg.frame_rate, cfg.fingerprint(), _native_provenance("log-mel", cfg))


def mfcc(w: Waveform, cfg: FeatureConfig) -> FeatureSequence:
    """Orthonormal DCT-II of the log-mel frames, first ``n_mfcc`` coefficients."""
    if cfg.feature_kind != "mfcc":
        raise ValueError("mfcc needs a config with feature_kind='mfcc'")
    c = dct(_log_mel_matrix(w, cfg), type=2, norm="ortho", axis=1)[:, : cfg.n_mfcc]
    if cfg.normalize:
        c = _normalize(c)
    return FeatureSequence(c, cfg.frame_rate, cfg.fingerprint(), _native_provenance("mfcc", cfg))


def extract(w: Waveform, cfg: FeatureConfig) -> FeatureSequence:
    return log_mel(w, cfg) if cfg.feature_kind == "log-mel" else mfcc(w, cfg)


def export_features(f: FeatureSequence, path: str | Path) -> None:
    """Write a TLFT file.

    Layout: ``"TLFT"``, u32 version, u32 L, u32 d, f32 frame_rate, then
    ``L * d`` float32 row-major, all little-endian. A provenance trailer
    (u32 byte length + UTF-8) follows the matrix when the sequence has one.
    """
    L, d = f.frames.shape
    blob = _TLFT_HEADER.pack(TLFT_MAGIC, TLFT_VERSION, L, d, f.frame_rate)
    blob += f.frames.astype("<f4").tobytes()
    if f.provenance:
        p = f.provenance.encode()
        blob += struct.pack("<I", len(p)) + p
    Path(path).write_bytes(blob)


def import_features(path: str | Path) -> FeatureSequence:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != TLFT_MAGIC:
        raise BadMagic(f"{path}: expected TLFT magic")
    if len(data) < _TLFT_HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, L, d, rate = _TLFT_HEADER.unpack_from(data)
    if version != TLFT_VERSION:
        raise VersionMismatch(f"{path}: TLFT version {version}, expected {TLFT_VERSION}")
    end = _TLFT_HEADER.size + 4 * L * d
    if len(data) < end:
        raise TruncatedFile(f"{path}: need {end} bytes, have {len(data)}")
    frames = np.frombuffer(data, dtype="<f4", count=L * d, offset=_TLFT_HEADER.size)
    frames = frames.astype(np.float64).reshape(L, d)
    if not np.all(np.isfinite(frames)):
        raise NonFiniteEntry(f"{path}: matrix has non-finite entries")
    provenance = f"tlft:{Path(path).name}"
    if len(data) >= end + 4:
        (n,) = struct.unpack_from("<I", data, end)
        if len(data) < end + 4 + n:
            raise TruncatedFile(f"{path}: provenance trailer truncated")
        provenance = data[end + 4:end + 4 + n].decode()
    m = re.fullmatch(r"native:[a-z-]+:([0-9a-f]{64})", provenance)
    fp = bytes.fromhex(m.group(1)) if m else hashlib.sha256(provenance.encode()).digest()
    return FeatureSequence(frames, float(rate), fp, provenance)
