"""Bitrate of deduplicated unit streams as the vocabulary grows.

Trains one codebook per K on a synthetic corpus, encodes every utterance
and reports fixed-width, unigram-entropy and measured codec bitrates.

    python3 scripts/bitrate_sweep.py --out results/bitrate.csv
"""
from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np

from unit_codec.codec import bitrate_report, fit_unigram
from unit_codec.features import PRESETS, log_mel
from unit_codec.pipeline import PipelineConfig, encode_waveform
from unit_codec.quantizer import kmeans_train
from unit_codec.synth import synth_corpus


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[50, 100, 200, 500])
    ap.add_argument("--speakers", type=int, default=4)
    ap.add_argument("--per-speaker", type=int, default=15)
    ap.add_argument("--preset", default="hubert-like-50hz", choices=sorted(PRESETS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)

    cfg = PRESETS[args.preset]
    items = synth_corpus(args.speakers, args.per_speaker, 1.5, seed=args.seed)
    waves = [it.wave for it in items]
    seconds = [w.duration_seconds for w in waves]
    frames = np.concatenate([log_mel(w, cfg).frames for w in waves])
    pc = PipelineConfig(preset=args.preset)
    print(f"{len(waves)} utterances, {sum(seconds):.1f} s, {len(frames)} frames at {cfg.frame_rate} Hz")

    rows = []
    for K in args.K:
        cb = kmeans_train(frames, K, seed=args.seed, fingerprint=cfg.fingerprint())
        utts = [encode_waveform(w, cb, pc) for w in waves]
        rep = bitrate_report(utts, fit_unigram(utts), seconds)
        rows.append({"K": K, "tokens": rep.n_tokens, "fixed": rep.fixed_bits_per_sec,
                     "entropy": rep.entropy_bits_per_sec, "units": rep.streams["units"],
                     "durations": rep.streams["durations"], "pitch": rep.streams["pitch"],
                     "total": rep.actual_bits_per_sec})
        r = rows[-1]
        print(f"K={K:>4}  tokens={r['tokens']:>5}  fixed={r['fixed']:7.1f}  entropy={r['entropy']:7.1f}  "
              f"huffman units={r['units']:7.1f}  total payload={r['total']:7.1f} bit/s")

    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)


if __name__ == "__main__":
    main()
