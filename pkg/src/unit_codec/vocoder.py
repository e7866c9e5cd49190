"""Units back to audio: centroid lookup, mel inversion, Griffin-Lim.

Synthesis runs on the same framing as analysis (Hann window, hop, n_fft
from the FeatureConfig). The pitch stream is not used; Griffin-Lim offers
no F0 control.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform
from .errors import ConfigMismatch, FeatureKindMismatch, VocabMismatch
from .features import LOG_FLOOR, FeatureConfig, FeatureSequence, analysis_window, log_mel, mel_filterbank
from .quantizer import Codebook, quantize
from .streams import EncodedUtterance, dedup, inflate

PEAK = 0.95


@dataclass(frozen=True)
class SynthesisConfig:
    griffin_lim_iters: int = 60
    nnls_iters: int = 50
    phase_seed: int = 0
    power: float = 1.0

    def __post_init__(self):
        if self.griffin_lim_iters < 1 or self.nnls_iters < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class SynthesisTrace:
    spectral_convergence: list = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "spectral_convergence"])
            for i, v in enumerate(self.spectral_convergence):
                wr.writerow([i, repr(v)])


def units_to_features(e: EncodedUtterance, cb: Codebook) -> FeatureSequence:
    """Inflate ``e`` and replace every frame by its unit's centroid."""
    if e.K != cb.K:
        raise VocabMismatch(f"utterance vocabulary {e.K} != codebook size {cb.K}")
    kind = cb.training_meta.get("feature_config", {}).get("feature_kind")
    if kind is not None and kind != "log-mel":
        raise FeatureKindMismatch(f"codebook was trained on {kind} features, need log-mel")
    units, _ = inflate(e)
    frames = cb.centroids[units.units] if len(units) else np.zeros((0, cb.dim))
    return FeatureSequence(frames, e.frame_rate, cb.fingerprint, "centroids")


def _spectral_norm_sq(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2) ** 2)


def mel_to_linear(f: FeatureSequence, cfg: FeatureConfig, iters: int = 50) -> np.ndarray:
    """Non-negative least-squares inversion of the mel filterbank per frame.

    Projected gradient descent with step 1/||F||^2 from a normalized
    back-projection, which keeps bins outside every active filter at zero.
    Returns a (L, n_fft // 2 + 1) magnitude spectrogram.
    """
    if cfg.feature_kind != "log-mel" or f.dim != cfg.n_mels:
        raise ConfigMismatch(f"features of dim {f.dim} were not produced by this {cfg.n_mels}-band log-mel config")
    if f.fingerprint not in (cfg.fingerprint(), b"\0" * 32):
        raise ConfigMismatch("feature fingerprint does not match the synthesis feature config")
    fb = mel_filterbank(cfg)
    target = np.maximum(np.exp(f.frames) - LOG_FLOOR, 0.0)  # (L, n_mels)
    if len(target) == 0:
        return np.zeros((0, cfg.n_bins))
    step = 1.0 / _spectral_norm_sq(fb)
    # start: per-band level estimates spread back over each band's bins; exact for flat spectra
    level = target / fb.sum(axis=1)
    cover = fb.sum(axis=0)
    s = (level @ fb) / np.where(cover > 0, cover, 1.0)
    gram = fb.T @ fb
    rhs = target @ fb
    for _ in range(iters):
        s = np.maximum(s - step * (s @ gram - rhs), 0.0)
    return s


def _istft(spec: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Least-squares inverse of ``features.stft`` (weighted overlap-add)."""
    L = spec.shape[0]
    win = analysis_window(cfg.window)
    n = (L - 1) * cfg.hop + cfg.window
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, : cfg.window] * win
    out = np.zeros(n)
    norm = np.zeros(n)
    w2 = win * win
    for t in range(L):
        s = t * cfg.hop
        out[s:s + cfg.window] += frames[t]
        norm[s:s + cfg.window] += w2
    return np.where(norm > 1e-12, out / np.where(norm > 1e-12, norm, 1.0), 0.0)


def _stft(x: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window)[:: cfg.hop]
    return np.fft.rfft(frames * analysis_window(cfg.window), n=cfg.n_fft, axis=1)


def _bin_weights(cfg: FeatureConfig) -> np.ndarray:
    # full-spectrum weighting of the half spectrum: DC and Nyquist once, others twice
    w = np.full(cfg.n_bins, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def griffin_lim(mag: np.ndarray, cfg: FeatureConfig, synth: SynthesisConfig = SynthesisConfig(),
                trace: SynthesisTrace | None = None) -> Waveform:
    """Phase reconstruction from a magnitude spectrogram.

    Output has ``(L - 1) * hop + window`` samples, so re-analysis yields
    exactly L frames, and is peak-normalized to 0.95. The spectral
    convergence ||(|STFT(x)| - mag)|| / ||mag|| of every iterate is appended
    to ``trace``; with the least-squares inverse above it cannot increase.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != cfg.n_bins:
        raise ConfigMismatch(f"magnitude has shape {mag.shape}, expected (L, {cfg.n_bins})")
    if np.any(mag < 0) or not np.all(np.isfinite(mag)):
        raise ValueError("magnitude must be finite and non-negative")
    L = mag.shape[0]
    if L == 0:
        return Waveform(np.zeros(0), cfg.sample_rate)
    n = (L - 1) * cfg.hop + cfg.window
    bw = _bin_weights(cfg)
    ref = np.sqrt(np.sum(bw * mag * mag))
    if ref == 0:
        return Waveform(np.zeros(n), cfg.sample_rate)
    rng = np.random.default_rng(synth.phase_seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    x = _istft(mag * phase, cfg)
    for _ in range(synth.griffin_lim_iters):
        spec = _stft(x, cfg)
        if trace is not None:
            err = np.abs(spec) - mag
            trace.spectral_convergence.append(float(np.sqrt(np.sum(bw * err * err)) / ref))
        x = _istft(mag * np.exp(1j * np.angle(spec)), cfg)
    if trace is not None:
        err = np.abs(_stft(x, cfg)) - mag
        trace.spectral_convergence.append(float(np.sqrt(np.sum(bw * err * err)) / ref))
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (PEAK / peak)
    return Waveform(x, cfg.sample_rate)


def synthesize(e: EncodedUtterance, cb: Codebook, cfg: FeatureConfig,
               synth: SynthesisConfig = SynthesisConfig(), trace: SynthesisTrace | None = None) -> Waveform:
    feats = units_to_features(e, cb)
    if len(feats) == 0:
        return Waveform(np.zeros(0), cfg.sample_rate)
    mag = mel_to_linear(feats, cfg, synth.nnls_iters)
    return griffin_lim(mag, cfg, synth, trace)


def resynthesize(w: Waveform, cb: Codebook, cfg: FeatureConfig,
                 synth: SynthesisConfig = SynthesisConfig(), trace: SynthesisTrace | None = None) -> Waveform:
    """audio -> log-mel -> units -> dedup -> inflate -> centroids -> audio."""
    if w.sample_rate != cfg.sample_rate:
        raise ConfigMismatch(f"waveform rate {w.sample_rate} != feature rate {cfg.sample_rate}")
    units = quantize(log_mel(w, cfg), cb)
    return synthesize(dedup(units), cb, cfg, synth, trace)
