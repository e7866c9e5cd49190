"""Audio -> units -> audio at several vocabulary sizes.

Writes the original and one resynthesis per K for a held-out utterance and
prints the mel-cepstral distance averaged over a held-out set.

    python3 scripts/resynthesis.py --out-dir results/resynth
"""
from __future__ import annotations

import argparse
import dataclasses
import time
from pathlib import Path

import numpy as np

from unit_codec.audio import write_wav
from unit_codec.features import PRESETS, log_mel, mfcc
from unit_codec.quantizer import kmeans_train
from unit_codec.synth import synth_corpus
from unit_codec.vocoder import SynthesisConfig, SynthesisTrace, resynthesize


def mel_cepstral_distance(a, b, cfg) -> float:
    mc = dataclasses.replace(cfg, feature_kind="mfcc", n_mfcc=13)
    ca, cb = mfcc(a, mc).frames, mfcc(b, mc).frames
    n = min(len(ca), len(cb))
    return float(np.mean(10 / np.log(10) * np.sqrt(2 * np.sum((ca[:n, 1:] - cb[:n, 1:]) ** 2, axis=1))))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[50, 100, 200, 500])
    ap.add_argument("--gl-iters", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("results/resynth"))
    args = ap.parse_args(argv)

    cfg = PRESETS["hubert-like-50hz"]
    train = synth_corpus(4, 25, 1.5, seed=args.seed)
    held = synth_corpus(4, 5, 1.5, seed=args.seed + 1)
    frames = np.concatenate([log_mel(it.wave, cfg).frames for it in train])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(held[0].wave, args.out_dir / "original.wav")
    synth = SynthesisConfig(griffin_lim_iters=args.gl_iters, phase_seed=args.seed)
    for K in args.K:
        cb = kmeans_train(frames, K, seed=args.seed, max_iters=50, fingerprint=cfg.fingerprint(), extra_meta={"feature_config": cfg.to_dict()})
        t0 = time.perf_counter()
        trace = SynthesisTrace()
        outs = [resynthesize(it.wave, cb, cfg, synth, trace if i == 0 else None) for i, it in enumerate(held)]
        dt = (time.perf_counter() - t0) / len(held)
        mcd = np.mean([mel_cepstral_distance(it.wave, y, cfg) for it, y in zip(held, outs)])
        write_wav(outs[0], args.out_dir / f"resynth_K{K}.wav")
        trace.to_csv(args.out_dir / f"convergence_K{K}.csv")
        print(f"K={K:>4}  MCD={mcd:6.2f} dB  final spectral convergence={trace.spectral_convergence[-1]:.3f}  "
              f"{dt:.2f} s per utterance")


if __name__ == "__main__":
    main()
