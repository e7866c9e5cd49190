"""Continue a spoken prompt with an n-gram unit LM under several seeds.

    python3 scripts/speech_continuation.py --seeds 3 --out-dir results/continuation
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from unit_codec.audio import write_wav
from unit_codec.features import PRESETS, log_mel
from unit_codec.quantizer import kmeans_train, quantize
from unit_codec.streams import dedup, format_line
from unit_codec.synth import synth_corpus
from unit_codec.unitlm import continue_units, perplexity, train_ngram
from unit_codec.vocoder import SynthesisConfig, synthesize


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=100)
    ap.add_argument("--order", type=int, default=3)
    ap.add_argument("--temperature", type=float, default=1.0)
    ap.add_argument("--max-len", type=int, default=40)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out-dir", type=Path, default=Path("results/continuation"))
    args = ap.parse_args(argv)

    cfg = PRESETS["hubert-like-50hz"]
    train = synth_corpus(4, 30, 1.5, seed=0)
    frames = np.concatenate([log_mel(it.wave, cfg).frames for it in train])
    cb = kmeans_train(frames, args.K, seed=0, max_iters=50, fingerprint=cfg.fingerprint(), extra_meta={"feature_config": cfg.to_dict()})
    utts = [dedup(quantize(log_mel(it.wave, cfg), cb)) for it in train]
    m = train_ngram(utts, args.order, 0.1)
    held = [dedup(quantize(log_mel(it.wave, cfg), cb)) for it in synth_corpus(4, 3, 1.5, seed=1)]
    print(f"order-{args.order} LM over K={args.K}: train perplexity {perplexity(m, utts):.2f}, "
          f"held-out {perplexity(m, held):.2f}")

    prompt = synth_corpus(1, 1, 2.0, seed=5)[0].wave
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(prompt, args.out_dir / "prompt.wav")
    synth = SynthesisConfig()
    for seed in range(args.seeds):
        e = continue_units(prompt, cb, m, cfg, seed=seed, max_len=args.max_len, temperature=args.temperature)
        y = synthesize(e, cb, cfg, synth)
        write_wav(y, args.out_dir / f"continuation_seed{seed}.wav")
        print(f"seed {seed}: {len(e)} segments, {y.duration_seconds:.2f} s\n  ...{format_line(e)[-160:]}")


if __name__ == "__main__":
    main()
