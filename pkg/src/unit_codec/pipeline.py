"""Corpus-level orchestration: configs, per-file encoding, batch
preprocessing with a worker pool, and codebook training from audio."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codec, pitch as pitchmod
from .audio import Waveform, read_wav, resample
from .errors import UnitCodecError
from .features import PRESETS, FeatureConfig, extract, import_features
from .quantizer import Codebook, UnitSequence, kmeans_train, load_codebook, quantize
from .streams import EncodedUtterance, align_pitch, dedup, format_line

log = logging.getLogger(__name__)

NORMALIZATIONS = ("none", "per-speaker", "prefix")
# reference for "none": log-ratio to 150 Hz keeps 33-670 Hz inside the +-1.5 pitch code range
FIXED_REFERENCE_HZ = 150.0


@dataclass
class PipelineConfig:
    preset: str = "hubert-like-50hz"
    K: int = 100
    codebook: str | None = None
    pitch_band: tuple = pitchmod.DEFAULT_BAND
    voicing_threshold: float = pitchmod.DEFAULT_THRESHOLD
    normalization: str = "none"
    prefix_seconds: float = 1.0
    coding_mode: str = "fixed"
    unigram: str | None = None
    unigram_smoothing: float = 0.5
    speaker_stats: str | None = None
    speaker_regex: str = r"^([^_]+)_"
    workers: int = 1
    seed: int = 0
    frame_cap: int = 200_000
    max_iters: int = 100
    on_failure: str = "error"  # or "warn"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.coding_mode not in codec.MODE_NAMES:
            raise ValueError(f"coding_mode must be one of {sorted(codec.MODE_NAMES)}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.on_failure not in ("error", "warn"):
            raise ValueError("on_failure must be 'error' or 'warn'")
        self.pitch_band = tuple(float(b) for b in self.pitch_band)

    @property
    def features(self) -> FeatureConfig:
        return PRESETS[self.preset]

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "PipelineConfig":
        """JSON file values, then non-None keyword overrides (flags win)."""
        data = json.loads(Path(path).read_text()) if path else {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None and k in known})
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pitch_band"] = list(self.pitch_band)
        return d


@dataclass
class ManifestRecord:
    audio_path: str
    duration_seconds: float | None = None
    speaker_id: str | None = None
    outputs: dict = field(default_factory=dict)
    status: str = "ok"
    reason: str | None = None

    def to_json(self) -> str:
        d = {"audio_path": self.audio_path, "duration_seconds": self.duration_seconds,
             "speaker_id": self.speaker_id, "outputs": self.outputs, "status": self.status}
        if self.reason is not None:
            d["reason"] = self.reason
        return json.dumps(d, sort_keys=True)


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            out.append(ManifestRecord(d["audio_path"], d.get("duration_seconds"), d.get("speaker_id"),
                                      d.get("outputs", {}), d["status"], d.get("reason")))
    return out


def speaker_of(path: str | Path, regex: str) -> str | None:
    m = re.search(regex, Path(path).name)
    return m.group(1) if m else None


def list_audio(audio_dir: str | Path) -> list[Path]:
    return sorted(Path(audio_dir).glob("*.wav"))


def load_audio(path: str | Path, cfg: FeatureConfig) -> Waveform:
    w = read_wav(path)
    return resample(w, cfg.sample_rate) if w.sample_rate != cfg.sample_rate else w


@dataclass
class Analysis:
    """Frame-level encoder output for one file, before pitch normalization."""

    units: np.ndarray
    K: int
    frame_rate: float
    pitch: pitchmod.PitchTrack
    duration_seconds: float


def analyze(w: Waveform, cb: Codebook, cfg: FeatureConfig, band=pitchmod.DEFAULT_BAND,
            threshold: float = pitchmod.DEFAULT_THRESHOLD) -> Analysis:
    """Dense features, units and a raw pitch track aligned to the unit frames."""
    feats = extract(w, cfg)
    units = quantize(feats, cb)
    track = pitchmod.track_pitch(w, cfg.frame_rate, band, threshold, frame_length=cfg.window)
    track = align_pitch(track, cfg.frame_rate, n_frames=len(units))
    return Analysis(units.units, cb.K, cfg.frame_rate, track, w.duration_seconds)


def normalize_track(track: pitchmod.PitchTrack, mode: str, prefix_seconds: float = 1.0,
                    stats: pitchmod.SpeakerStats | None = None) -> pitchmod.PitchTrack:
    if mode == "none":
        return pitchmod.normalize_per_speaker(track, pitchmod.SpeakerStats(float(np.log(FIXED_REFERENCE_HZ)), 0.0, 0))
    if mode == "prefix":
        return pitchmod.normalize_prefix(track, prefix_seconds)
    if stats is None:
        raise ValueError("per-speaker normalization needs speaker statistics")
    return pitchmod.normalize_per_speaker(track, stats)


def to_encoded(a: Analysis, mode: str = "none", prefix_seconds: float = 1.0,
               stats: pitchmod.SpeakerStats | None = None) -> EncodedUtterance:
    norm = normalize_track(a.pitch, mode, prefix_seconds, stats)
    return dedup(UnitSequence(a.units, a.frame_rate, a.K), norm)


def encode_waveform(w: Waveform, cb: Codebook, pc: PipelineConfig,
                    stats: pitchmod.SpeakerStats | None = None) -> EncodedUtterance:
    cfg = pc.features
    if w.sample_rate != cfg.sample_rate:
        w = resample(w, cfg.sample_rate)
    a = analyze(w, cb, cfg, pc.pitch_band, pc.voicing_threshold)
    return to_encoded(a, pc.normalization, pc.prefix_seconds, stats)


def load_speaker_stats(path: str | Path) -> dict[str, pitchmod.SpeakerStats]:
    data = json.loads(Path(path).read_text())
    return {k: pitchmod.SpeakerStats(**v) for k, v in data.items()}


def save_speaker_stats(stats: dict[str, pitchmod.SpeakerStats], path: str | Path) -> None:
    Path(path).write_text(json.dumps({str(k): asdict(v) for k, v in stats.items()}, indent=1, sort_keys=True))


# --- worker-side state (one codebook per process) -------------------------

_WORKER: dict = {}


def _init_worker(codebook_path: str, pc_dict: dict):
    _WORKER["cb"] = load_codebook(codebook_path)
    _WORKER["pc"] = PipelineConfig(**pc_dict)


def _analyze_file(path: str):
    pc: PipelineConfig = _WORKER["pc"]
    try:
        w = load_audio(path, pc.features)
        return path, analyze(w, _WORKER["cb"], pc.features, pc.pitch_band, pc.voicing_threshold), None
    except (UnitCodecError, OSError, ValueError) as exc:
        return path, None, f"{type(exc).__name__}: {exc}"


def _run_analysis(paths: Sequence[str], pc: PipelineConfig) -> list:
    if pc.workers == 1:
        _init_worker(pc.codebook, pc.to_dict())
        return [_analyze_file(p) for p in paths]
    with ProcessPoolExecutor(pc.workers, initializer=_init_worker,
                             initargs=(pc.codebook, pc.to_dict())) as pool:
        return list(pool.map(_analyze_file, paths, chunksize=max(1, len(paths) // (4 * pc.workers))))


@dataclass
class PreprocessResult:
    manifest: list[ManifestRecord]
    utterances: dict  # audio_path -> EncodedUtterance for ok records

    @property
    def n_failed(self) -> int:
        return sum(r.status != "ok" for r in self.manifest)


def preprocess(audio_dir: str | Path, pc: PipelineConfig, out_dir: str | Path) -> PreprocessResult:
    """Encode every WAV in ``audio_dir`` into streams and bitstreams.

    Frame-level analysis runs in ``pc.workers`` processes; normalization,
    run-length encoding and all writes happen afterwards in input order, so
    outputs do not depend on the worker count. A file that fails is recorded
    in the manifest and skipped.
    """
    if pc.codebook is None:
        raise ValueError("preprocess needs a codebook path")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [str(p) for p in list_audio(audio_dir)]
    results = _run_analysis(paths, pc)

    records: dict[str, ManifestRecord] = {}
    analyses: dict[str, Analysis] = {}
    for path, a, err in results:
        spk = speaker_of(path, pc.speaker_regex)
        rec = ManifestRecord(path, None if a is None else a.duration_seconds, spk)
        if err is not None:
            rec.status, rec.reason = "failed", err
        else:
            analyses[path] = a
        records[path] = rec

    stats: dict[str, pitchmod.SpeakerStats] = {}
    if pc.normalization == "per-speaker":
        if pc.speaker_stats:
            stats = load_speaker_stats(pc.speaker_stats)
        else:
            by_spk: dict = {}
            for path, a in analyses.items():
                by_spk.setdefault(records[path].speaker_id, []).append(a.pitch)
            for spk, tracks in sorted(by_spk.items(), key=lambda kv: str(kv[0])):
                try:
                    stats[spk] = pitchmod.speaker_stats(tracks)
                except UnitCodecError as exc:
                    log.warning("speaker %s: %s", spk, exc)
            save_speaker_stats(stats, out / "speaker_stats.json")

    encoded: dict[str, EncodedUtterance] = {}
    for path in paths:
        if path not in analyses:
            continue
        rec = records[path]
        try:
            st = stats.get(rec.speaker_id) if pc.normalization == "per-speaker" else None
            if pc.normalization == "per-speaker" and st is None:
                raise pitchmod.InsufficientVoicedFrames(f"no pitch statistics for speaker {rec.speaker_id}")
            encoded[path] = to_encoded(analyses[path], pc.normalization, pc.prefix_seconds, st)
        except UnitCodecError as exc:
            rec.status, rec.reason = "failed", f"{type(exc).__name__}: {exc}"

    model = None
    if pc.coding_mode == "entropy":
        if pc.unigram:
            model = codec.UnigramModel.from_json(Path(pc.unigram).read_text())
        else:
            if not encoded:
                raise UnitCodecError("no file encoded successfully; cannot fit a unigram model")
            model = codec.fit_unigram(list(encoded.values()), pc.unigram_smoothing)
            (out / "unigram.json").write_text(model.to_json())

    lines = []
    for path in paths:
        if path not in encoded:
            continue
        e = encoded[path]
        stem = Path(path).stem
        codec.write_bitstream(codec.encode_bitstream(e, model), out / f"{stem}.tluc")
        line = format_line(e)
        (out / f"{stem}.units").write_text(line + "\n")
        lines.append(line)
        records[path].outputs = {"bitstream": f"{stem}.tluc", "streams": f"{stem}.units"}

    (out / "streams.txt").write_text("".join(l + "\n" for l in lines))
    manifest = [records[p] for p in paths]
    with open(out / "manifest.jsonl", "w") as fh:
        for r in manifest:
            fh.write(r.to_json() + "\n")
    recorded = {k: v for k, v in pc.to_dict().items() if k != "workers"}  # keep outputs worker-invariant
    (out / "pipeline_config.json").write_text(json.dumps(recorded, indent=1, sort_keys=True))
    return PreprocessResult(manifest, encoded)


def pool_training_frames(inputs: Sequence[str | Path], cfg: FeatureConfig, cap: int, seed: int) -> tuple[np.ndarray, bytes]:
    """Stack frames from WAV or TLFT inputs, subsampled to ``cap`` rows."""
    mats, fp = [], None
    for p in inputs:
        p = Path(p)
        if p.suffix == ".tlft":
            f = import_features(p)
        else:
            f = extract(load_audio(p, cfg), cfg)
        if fp is None:
            fp = f.fingerprint
        if len(f):
            mats.append(f.frames)
    if not mats:
        raise UnitCodecError("no frames found in the training inputs")
    x = np.concatenate(mats)
    if len(x) > cap:
        idx = np.sort(np.random.default_rng(seed).choice(len(x), cap, replace=False))
        x = x[idx]
    return x, fp


def train_codebook(inputs: Sequence[str | Path], pc: PipelineConfig, K: int | None = None) -> Codebook:
    cfg = pc.features
    x, fp = pool_training_frames(inputs, cfg, pc.frame_cap, pc.seed)
    return kmeans_train(x, K or pc.K, max_iters=pc.max_iters, seed=pc.seed, fingerprint=fp,
                        extra_meta={"feature_config": cfg.to_dict(), "preset": pc.preset})


def training_inputs(path: str | Path) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    found = sorted(p.glob("*.wav")) + sorted(p.glob("*.tlft"))
    return found

