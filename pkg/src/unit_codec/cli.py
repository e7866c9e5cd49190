"""``unit-codec`` command line.

Every subcommand accepts ``--config`` (a JSON file of PipelineConfig
fields), ``--seed`` and ``--json``; explicit flags override config values.
Library errors exit with the error class's own code (see errors.py).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import codec, pipeline, probing, streams, unitlm
from .audio import write_wav
from .errors import UnitCodecError
from .features import PRESETS, extract
from .pipeline import PipelineConfig
from .quantizer import load_codebook, save_codebook
from .synth import default_speakers, synth_corpus, write_corpus
from .vocoder import SynthesisConfig, SynthesisTrace, resynthesize, synthesize

log = logging.getLogger("unit_codec")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FAILED_RECORDS = 4

def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, sort_keys=True) if args.json else text)

def _config(args, **extra) -> PipelineConfig:
    overrides = {
        "preset": getattr(args, "preset", None),
        "codebook": codebook if isinstance(codebook := getattr(args, "codebook", None), str) else None,
        "normalization": getattr(args, "normalization", None),
        "prefix_seconds": getattr(args, "prefix_seconds", None),
        "coding_mode": getattr(args, "coding_mode", None),
        "unigram": getattr(args, "unigram", None),
        "speaker_stats": getattr(args, "speaker_stats", None),
        "workers": getattr(args, "workers", None),
        "seed": args.seed,
        "on_failure": getattr(args, "on_failure", None),
    }
    overrides.update(extra)
    return PipelineConfig.load(args.config, **overrides)

def cmd_synth_corpus(args) -> int:
    spk = default_speakers(args.speakers)
    items = synth_corpus(args.speakers, args.per_speaker, args.seconds, args.seed or 0, speakers=spk)
    paths = write_corpus(items, args.out_dir)
    total = sum(it.wave.duration_seconds for it in items)
    _emit(args, {"files": len(paths), "seconds": total}, f"wrote {len(paths)} files ({total:.1f} s) to {args.out_dir}")
    return 0

def cmd_train_kmeans(args) -> int:
    pc = _config(args, K=args.K, frame_cap=args.frame_cap, max_iters=args.max_iters)
    inputs = pipeline.training_inputs(args.input)
    if not inputs:
        raise UnitCodecError(f"no .wav or .tlft inputs under {args.input}")
    cb = pipeline.train_codebook(inputs, pc)
    save_codebook(cb, args.out)
    meta = {k: cb.training_meta[k] for k in ("iters_run", "final_distortion", "seed", "n_points")}
    _emit(args, {"K": cb.K, "dim": cb.dim, **meta, "out": args.out},
          f"K={cb.K} d={cb.dim} iters={meta['iters_run']} distortion={meta['final_distortion']:.4f} -> {args.out}")
    return 0

def cmd_preprocess(args) -> int:
    pc = _config(args)
    res = pipeline.preprocess(args.audio_dir, pc, args.out_dir)
    ok = len(res.manifest) - res.n_failed
    _emit(args, {"records": len(res.manifest), "ok": ok, "failed": res.n_failed},
          f"{len(res.manifest)} files: {ok} ok, {res.n_failed} failed; manifest at {Path(args.out_dir) / 'manifest.jsonl'}")
    if res.n_failed and pc.on_failure == "error":
        return EXIT_FAILED_RECORDS
    return 0

def _unigram(path: str | None):
    return codec.UnigramModel.from_json(Path(path).read_text()) if path else None

def cmd_encode(args) -> int:
    pc = _config(args)
    cb = load_codebook(pc.codebook)
    w = pipeline.load_audio(args.wav, pc.features)
    stats = None
    if pc.normalization == "per-speaker":
        if not pc.speaker_stats:
            raise UnitCodecError("per-speaker normalization needs --speaker-stats")
        spk = args.speaker or pipeline.speaker_of(args.wav, pc.speaker_regex)
        stats = pipeline.load_speaker_stats(pc.speaker_stats)[spk]
    e = pipeline.encode_waveform(w, cb, pc, stats)
    model = _unigram(pc.unigram) if pc.coding_mode == "entropy" else None
    if pc.coding_mode == "entropy" and model is None:
        raise UnitCodecError("entropy coding needs --unigram")
    b = codec.encode_bitstream(e, model)
    codec.write_bitstream(b, args.out)
    _emit(args, {"segments": len(e), "frames": e.total_frames, "bytes": len(b.to_bytes()), "stream_bits": b.stream_bits},
          f"{len(e)} segments / {e.total_frames} frames -> {len(b.to_bytes())} bytes in {args.out}")
    return 0

def cmd_decode(args) -> int:
    b = codec.read_bitstream(args.bitstream)
    e = codec.decode_bitstream(b, _unigram(args.unigram))
    line = streams.format_line(e)
    if args.out:
        Path(args.out).write_text(line + "\n")
    payload = {"K": e.K, "frame_rate": e.frame_rate, "units": e.units.tolist(), "durations": e.durations.tolist(),
               "pitch": [float(p) if v else None for p, v in zip(e.pitch, e.voiced)]}
    _emit(args, payload, line)
    return 0

def cmd_resynth(args) -> int:
    pc = _config(args)
    cb = load_codebook(pc.codebook)
    w = pipeline.load_audio(args.wav, pc.features)
    trace = SynthesisTrace()
    t0 = time.perf_counter()
    out = resynthesize(w, cb, pc.features, SynthesisConfig(griffin_lim_iters=args.gl_iters, phase_seed=pc.seed), trace)
    write_wav(out, args.out)
    if args.trace:
        trace.to_csv(args.trace)
    _emit(args, {"samples": len(out), "seconds": out.duration_seconds, "runtime": time.perf_counter() - t0,
                 "final_spectral_convergence": trace.spectral_convergence[-1] if trace.spectral_convergence else None},
          f"wrote {out.duration_seconds:.2f} s to {args.out}")
    return 0

def _encode_dir(audio_dir, cb, pc):
    utts, durs = [], []
    for p in pipeline.list_audio(audio_dir):
        w = pipeline.load_audio(p, pc.features)
        utts.append(pipeline.encode_waveform(w, cb, pc))
        durs.append(w.duration_seconds)
    return utts, durs

def cmd_bitrate(args) -> int:
    pc = _config(args)
    rows = []
    for path in args.codebook:
        cb = load_codebook(path)
        utts, durs = _encode_dir(args.audio_dir, cb, pc)
        model = _unigram(pc.unigram) or codec.fit_unigram(utts, pc.unigram_smoothing)
        rep = codec.bitrate_report(utts, model, durs)
        rows.append(rep.to_dict() | {"codebook": path})
    if args.json:
        print(json.dumps(rows, sort_keys=True))
    else:
        print(f"{'K':>5}{'tokens':>9}{'seconds':>9}{'fixed b/s':>11}{'entropy b/s':>13}{'units b/s':>11}"
              f"{'total b/s':>11}")
        for r in rows:
            print(f"{r['K']:>5}{r['n_tokens']:>9}{r['audio_seconds']:>9.1f}{r['fixed_bits_per_sec']:>11.1f}"
                  f"{r['entropy_bits_per_sec']:>13.1f}{r['streams']['units']:>11.1f}{r['actual_bits_per_sec']:>11.1f}")
    return 0

def cmd_probe(args) -> int:
    pc = _config(args)
    cfg = pc.features
    paths = pipeline.list_audio(args.audio_dir)
    feats = [extract(pipeline.load_audio(p, cfg), cfg) for p in paths]
    speakers = [pipeline.speaker_of(p, pc.speaker_regex) for p in paths]
    cbs = [load_codebook(p) for p in args.codebook]
    rows = probing.speaker_probe_experiment(feats, speakers, cbs, split_seed=args.split_seed,
                                            epochs=args.epochs, probe_seed=pc.seed)
    if args.csv:
        probing.write_csv(rows, args.csv)
    _emit(args, {"rows": [{"representation": r.representation, "K": r.K, "accuracy": r.accuracy} for r in rows],
                 "probe": "pooled softmax regression"},
          probing.format_table(rows) + "\n(probe: softmax regression on pooled features)")
    return 0

def cmd_lm_train(args) -> int:
    utts = streams.read_dump(args.streams, args.K, args.frame_rate)
    m = unitlm.train_ngram(utts, args.order, args.smoothing_k, K=args.K)
    unitlm.save_ngram(m, args.out)
    ppl = unitlm.perplexity(m, utts)
    _emit(args, {"order": m.order, "K": m.K, "contexts": len(m.counts), "train_perplexity": ppl},
          f"order-{m.order} model, {len(m.counts)} contexts, train perplexity {ppl:.2f} -> {args.out}")
    return 0

def cmd_continue(args) -> int:
    pc = _config(args)
    cb = load_codebook(pc.codebook)
    m = unitlm.load_ngram(args.lm)
    w = pipeline.load_audio(args.wav, pc.features)
    full = unitlm.continue_units(w, cb, m, pc.features, seed=pc.seed, max_len=args.max_len,
                                 temperature=args.temperature)
    out = synthesize(full, cb, pc.features, SynthesisConfig(phase_seed=pc.seed))
    write_wav(out, args.out)
    _emit(args, {"segments": len(full), "units": full.units.tolist(), "seconds": out.duration_seconds},
          f"{len(full)} segments, {out.duration_seconds:.2f} s -> {args.out}")
    return 0

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unit-codec", description="Discrete speech unit toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON file with pipeline settings")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.set_defaults(func=fn)
        return sp

    def features(sp):
        sp.add_argument("--preset", choices=sorted(PRESETS))

    def pitch_opts(sp):
        sp.add_argument("--normalization", choices=pipeline.NORMALIZATIONS)
        sp.add_argument("--prefix-seconds", type=float)
        sp.add_argument("--speaker-stats")

    sp = add("synth-corpus", cmd_synth_corpus, "write a synthetic multi-speaker WAV corpus")
    sp.add_argument("out_dir")
    sp.add_argument("--speakers", type=int, default=4)
    sp.add_argument("--per-speaker", type=int, default=10)
    sp.add_argument("--seconds", type=float, default=1.5)

    sp = add("train-kmeans", cmd_train_kmeans, "train a k-means codebook (TLCB) from WAV or TLFT files")
    sp.add_argument("input", help="directory of .wav/.tlft files, or one file")
    sp.add_argument("-K", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--frame-cap", type=int, default=None)
    sp.add_argument("--max-iters", type=int, default=None)
    features(sp)

    sp = add("preprocess", cmd_preprocess, "encode a directory of WAVs into streams, bitstreams and a manifest")
    sp.add_argument("audio_dir")
    sp.add_argument("out_dir")
    sp.add_argument("--codebook")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--coding-mode", choices=sorted(codec.MODE_NAMES))
    sp.add_argument("--unigram")
    sp.add_argument("--on-failure", choices=("error", "warn"))
    features(sp)
    pitch_opts(sp)

    sp = add("encode", cmd_encode, "encode one WAV into a TLUC bitstream")
    sp.add_argument("wav")
    sp.add_argument("--codebook")
    sp.add_argument("--out", required=True)
    sp.add_argument("--coding-mode", choices=sorted(codec.MODE_NAMES))
    sp.add_argument("--unigram")
    sp.add_argument("--speaker")
    features(sp)
    pitch_opts(sp)

    sp = add("decode", cmd_decode, "decode a TLUC bitstream to unit:duration:pitch text")
    sp.add_argument("bitstream")
    sp.add_argument("--unigram")
    sp.add_argument("--out")

    sp = add("resynth", cmd_resynth, "audio -> units -> audio resynthesis")
    sp.add_argument("wav")
    sp.add_argument("--codebook")
    sp.add_argument("--out", required=True)
    sp.add_argument("--gl-iters", type=int, default=60)
    sp.add_argument("--trace", help="write Griffin-Lim convergence trace CSV")
    features(sp)

    sp = add("bitrate", cmd_bitrate, "report fixed, entropy and measured bitrates per codebook")
    sp.add_argument("audio_dir")
    sp.add_argument("--codebook", action="append", required=True)
    sp.add_argument("--unigram")
    features(sp)
    pitch_opts(sp)

    sp = add("probe", cmd_probe, "speaker probing on continuous vs quantized representations")
    sp.add_argument("audio_dir")
    sp.add_argument("--codebook", action="append", default=[])
    sp.add_argument("--split-seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=5)
    sp.add_argument("--csv")
    features(sp)

    sp = add("lm-train", cmd_lm_train, "train an n-gram unit LM (TLLM) from a streams dump")
    sp.add_argument("streams")
    sp.add_argument("-K", type=int, required=True)
    sp.add_argument("--frame-rate", type=float, default=50.0)
    sp.add_argument("--order", type=int, default=3)
    sp.add_argument("--smoothing-k", type=float, default=0.1)
    sp.add_argument("--out", required=True)

    sp = add("continue", cmd_continue, "continue a spoken prompt with sampled units")
    sp.add_argument("wav")
    sp.add_argument("--codebook")
    sp.add_argument("--lm", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-len", type=int, default=50)
    sp.add_argument("--temperature", type=float, default=1.0)
    features(sp)
    return p

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UnitCodecError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

if __name__ == "__main__":
    sys.exit(main())
