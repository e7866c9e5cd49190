"""Speaker probing on continuous and quantized representations.

The probe is multinomial logistic regression over a pooled, fixed-size
summary of each utterance: mean and standard deviation of the dense frames,
or the normalized unit histogram for quantized streams.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateLabels, DimensionMismatch, EmptySequence, InsufficientData
from .features import FeatureSequence
from .quantizer import Codebook, UnitSequence, quantize

CONTINUOUS = "continuous"


@dataclass(frozen=True)
class ProbeExample:
    vector: np.ndarray
    label: int


@dataclass
class Probe:
    weights: np.ndarray  # C x d
    bias: np.ndarray
    training_meta: dict = field(default_factory=dict)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias


def pool_continuous(f: FeatureSequence) -> np.ndarray:
    if len(f) == 0:
        raise EmptySequence("cannot pool an empty feature sequence")
    return np.concatenate([f.frames.mean(axis=0), f.frames.std(axis=0)])


def pool_quantized(u: UnitSequence) -> np.ndarray:
    if len(u) == 0:
        raise EmptySequence("cannot pool an empty unit sequence")
    return np.bincount(u.units, minlength=u.K) / len(u)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_probe(examples, labels=None, epochs: int = 5, lr: float = 0.1, seed: int = 0,
                batch_size: int = 16, l2: float = 1e-4, n_classes: int | None = None) -> Probe:
    """Softmax regression trained with seeded mini-batch SGD.

    ``examples`` is an (N, d) array with ``labels`` alongside, or a list of
    ProbeExample. Mean training loss per epoch is kept in
    ``training_meta['losses']``.
    """
    if labels is None:
        x = np.stack([e.vector for e in examples])
        y = np.array([e.label for e in examples])
    else:
        x = np.asarray(examples, dtype=np.float64)
        y = np.asarray(labels)
    if len(x) == 0:
        raise DegenerateLabels("no training examples")
    y = y.astype(np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise DegenerateLabels("probe training needs at least two classes")
    C = int(n_classes or (y.max() + 1))
    n, d = x.shape
    rng = np.random.default_rng(seed)
    W = np.zeros((C, d))
    b = np.zeros(C)
    onehot = np.eye(C)[y]
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            p = _softmax(x[idx] @ W.T + b)
            total += float(-np.log(np.maximum(p[np.arange(len(idx)), y[idx]], 1e-300)).sum())
            g = (p - onehot[idx]) / len(idx)
            W -= lr * (g.T @ x[idx] + l2 * W)
            b -= lr * g.sum(axis=0)
        losses.append(total / n)
    meta = {"epochs": epochs, "lr": lr, "seed": seed, "final_loss": losses[-1] if losses else None,
            "losses": losses}
    return Probe(W, b, meta)


def predict(p: Probe, x: np.ndarray) -> np.ndarray:
    return np.argmax(p.logits(x), axis=1)  # argmax ties go to the lowest class


def eval_probe(p: Probe, examples, labels=None) -> float:
    if labels is None:
        if not examples:
            raise EmptySequence("empty test set")
        x = np.stack([e.vector for e in examples])
        y = np.array([e.label for e in examples])
    else:
        x = np.asarray(examples, dtype=np.float64)
        y = np.asarray(labels)
    if len(x) == 0:
        raise EmptySequence("empty test set")
    if x.ndim != 2 or x.shape[1] != p.weights.shape[1]:
        raise DimensionMismatch(f"examples have dim {x.shape[-1]}, probe expects {p.weights.shape[1]}")
    return float(np.mean(predict(p, x) == y))


def stratified_split(labels: Sequence[int], seed: int, test_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Per-speaker random split of utterance indices; every speaker lands on both sides."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = max(1, int(round(test_fraction * len(idx))))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train)), np.sort(np.array(test))


def _standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


@dataclass
class ProbeRow:
    representation: str
    K: int | None
    accuracy: float


def speaker_probe_experiment(features: Sequence[FeatureSequence], speakers: Sequence[int],
                             codebooks: Sequence[Codebook], split_seed: int = 0, epochs: int = 5,
                             lr: float = 0.1, probe_seed: int = 0, workers: int = 1) -> list[ProbeRow]:
    """One probe per representation on a 90/10 utterance split stratified by speaker.

    Rows: the continuous pooled features, then the unit histogram for each
    codebook. Pooled vectors are standardized with training-split statistics.
    """
    speakers = np.asarray(speakers)
    if len(features) != len(speakers):
        raise InsufficientData("one speaker label per utterance is required")
    ids, counts = np.unique(speakers, return_counts=True)
    if len(ids) < 2 or counts.min() < 10:
        raise InsufficientData("need at least 2 speakers with at least 10 utterances each")
    remap = {s: i for i, s in enumerate(ids)}
    y = np.array([remap[s] for s in speakers])
    train, test = stratified_split(y, split_seed)

    reps: list[tuple[str, int | None, np.ndarray]] = [
        (CONTINUOUS, None, np.stack([pool_continuous(f) for f in features]))]
    for cb in codebooks:
        reps.append(("quantized", cb.K, np.stack([pool_quantized(quantize(f, cb)) for f in features])))

    def run(rep):
        name, K, x = rep
        xtr, xte = _standardize(x[train], x[test])
        probe = train_probe(xtr, y[train], epochs=epochs, lr=lr, seed=probe_seed, n_classes=len(ids))
        return ProbeRow(name, K, eval_probe(probe, xte, y[test]))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, reps))
    return [run(r) for r in reps]


def format_table(rows: Sequence[ProbeRow]) -> str:
    lines = [f"{'representation':<16}{'K':>6}{'accuracy':>10}"]
    for r in rows:
        lines.append(f"{r.representation:<16}{(str(r.K) if r.K else '—'):>6}{r.accuracy:>10.3f}")
    return "\n".join(lines)


def write_csv(rows: Sequence[ProbeRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["representation", "K", "accuracy"])
        for r in rows:
            wr.writerow([r.representation, r.K if r.K else "—", f"{r.accuracy:.6f}"])
