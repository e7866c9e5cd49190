"""Speaker probing: pooled continuous features against unit histograms.

    python3 scripts/speaker_probing.py --splits 5 --csv results/probing.csv
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from unit_codec.features import PRESETS, log_mel
from unit_codec.probing import ProbeRow, format_table, speaker_probe_experiment, write_csv
from unit_codec.quantizer import kmeans_train
from unit_codec.synth import synth_corpus


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, nargs="+", default=[50, 100, 200, 500])
    ap.add_argument("--speakers", type=int, default=4)
    ap.add_argument("--per-speaker", type=int, default=50)
    ap.add_argument("--splits", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", type=Path)
    args = ap.parse_args(argv)

    cfg = PRESETS["hubert-like-50hz"]
    items = synth_corpus(args.speakers, args.per_speaker, 1.2, seed=args.seed)
    feats = [log_mel(it.wave, cfg) for it in items]
    frames = np.concatenate([f.frames for f in feats])
    cbs = [kmeans_train(frames, K, seed=args.seed, max_iters=50, fingerprint=cfg.fingerprint()) for K in args.K]

    runs = [speaker_probe_experiment(feats, [it.speaker_id for it in items], cbs, split_seed=s)
            for s in range(args.splits)]
    acc = np.array([[r.accuracy for r in rows] for rows in runs])
    mean = [ProbeRow(r.representation, r.K, float(a)) for r, a in zip(runs[0], acc.mean(axis=0))]
    print(f"mean test accuracy over {args.splits} splits ({args.speakers} speakers, chance {1 / args.speakers:.2f})")
    print(format_table(mean))
    print("probe: softmax regression on pooled features (mean+std, or unit histogram)")
    if args.csv:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        write_csv(mean, args.csv)


if __name__ == "__main__":
    main()
