"""n-gram language model over deduplicated unit streams, and speech
continuation built on it."""
from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import Waveform
from .errors import BadMagic, EmptyCorpus, TruncatedFile, VocabMismatch
from .features import FeatureConfig, log_mel
from .quantizer import Codebook, quantize
from .streams import EncodedUtterance, dedup
from .vocoder import SynthesisConfig, synthesize

TLLM_MAGIC = b"TLLM"
DEFAULT_DURATION = 2


@dataclass
class NGramModel:
    """Add-k smoothed n-gram model.

    Outcomes are the K units plus EOS (id K); contexts are padded on the
    left with BOS (id K + 1).
        P(u | ctx) = (c(ctx, u) + k) / (c(ctx) + k (K + 1))
    """

    order: int
    K: int
    smoothing_k: float
    counts: dict = field(default_factory=dict)  # ctx tuple -> {outcome: count}
    durations: np.ndarray | None = None  # median duration per unit, frames

    def __post_init__(self):
        self._totals = {ctx: sum(row.values()) for ctx, row in self.counts.items()}
        if self.durations is None:
            self.durations = np.full(self.K, DEFAULT_DURATION, dtype=np.int64)

    @property
    def eos(self) -> int:
        return self.K

    @property
    def bos(self) -> int:
        return self.K + 1

    def context(self, history: Sequence[int]) -> tuple:
        n = self.order - 1
        if n == 0:
            return ()
        h = [self.bos] * n + [int(u) for u in history]
        return tuple(h[-n:])

    def distribution(self, ctx: tuple) -> np.ndarray:
        """Probability vector over K units + EOS."""
        V = self.K + 1
        p = np.full(V, float(self.smoothing_k))
        for u, c in self.counts.get(ctx, {}).items():
            p[u] += c
        total = self._totals.get(ctx, 0) + self.smoothing_k * V
        if total <= 0:
            return np.full(V, 1.0 / V)  # unseen context with k = 0
        return p / total


def _as_units(item) -> np.ndarray:
    return np.asarray(item.units if isinstance(item, EncodedUtterance) else item, dtype=np.int64)


def train_ngram(corpus: Sequence, order: int = 3, smoothing_k: float = 0.1, K: int | None = None) -> NGramModel:
    """Count n-grams over each stream padded with order-1 BOS and one EOS.

    Corpus items are EncodedUtterances or plain unit-id sequences; with
    EncodedUtterances the per-unit median duration is learned as well.
    """
    if not corpus:
        raise EmptyCorpus("cannot train on an empty corpus")
    if order < 1:
        raise ValueError("order must be >= 1")
    if smoothing_k < 0:
        raise ValueError("smoothing_k must be >= 0")
    if K is None:
        if not isinstance(corpus[0], EncodedUtterance):
            raise ValueError("K is required for plain unit sequences")
        K = corpus[0].K
    counts: dict = defaultdict(lambda: defaultdict(int))
    dur_lists: dict = defaultdict(list)
    n = order - 1
    for item in corpus:
        units = _as_units(item)
        if len(units) and (units.min() < 0 or units.max() >= K):
            raise VocabMismatch(f"unit id outside [0, {K})")
        seq = [K + 1] * n + units.tolist() + [K]
        for i in range(n, len(seq)):
            counts[tuple(seq[i - n:i])][seq[i]] += 1
        if isinstance(item, EncodedUtterance):
            for u, d in zip(item.units, item.durations):
                dur_lists[int(u)].append(int(d))
    durations = np.full(K, DEFAULT_DURATION, dtype=np.int64)
    for u, ds in dur_lists.items():
        durations[u] = max(1, int(round(np.median(ds))))
    plain = {ctx: dict(row) for ctx, row in counts.items()}
    return NGramModel(order, K, float(smoothing_k), plain, durations)


def _streams(stream) -> list:
    if isinstance(stream, EncodedUtterance) or len(stream) == 0:
        return [stream]
    first = stream[0]
    if isinstance(first, EncodedUtterance) or np.ndim(first) > 0:
        return list(stream)
    return [stream]


def perplexity(m: NGramModel, stream) -> float:
    """exp of the mean negative log-likelihood, EOS included.

    ``stream`` is one unit sequence or a list of them.
    """
    nll, count = 0.0, 0
    for s in _streams(stream):
        units = _as_units(s)
        if len(units) and (units.min() < 0 or units.max() >= m.K):
            raise VocabMismatch(f"unit id outside [0, {m.K})")
        hist: list[int] = []
        for u in units.tolist() + [m.eos]:
            p = m.distribution(m.context(hist))[u]
            nll += -np.log(p) if p > 0 else np.inf
            count += 1
            hist.append(u)
    return float(np.exp(nll / count))


def _scaled(p: np.ndarray, temperature: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logp = np.log(p) / temperature
    logp -= logp.max()
    q = np.exp(logp)
    return q / q.sum()


def sample_continuation(m: NGramModel, prompt: Sequence[int], max_len: int = 100, temperature: float = 1.0,
                        seed: int | np.random.Generator = 0) -> np.ndarray:
    """Sample units after ``prompt`` from P(. | ctx)^(1/T), renormalized.

    Stops at EOS or after ``max_len`` units. The prompt is not repeated in
    the output. Once the tempered distribution has collapsed onto its
    maxima (all other mass underflows, as T -> 0), ties go to the lowest
    index, so tiny temperatures reproduce greedy decoding exactly. A
    distribution that was flat to begin with is still sampled.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    prompt = [int(u) for u in prompt]
    if any(u < 0 or u >= m.K for u in prompt):
        raise VocabMismatch(f"prompt unit outside [0, {m.K})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hist = list(prompt)
    out = []
    for _ in range(max_len):
        d = m.distribution(m.context(hist))
        q = _scaled(d, temperature)
        r = rng.random()
        top = q == q.max()
        if np.any(d[~top] > 0) and np.all(q[~top] == 0):
            u = int(np.argmax(top))  # collapsed onto the maxima: lowest index, as greedy decoding
        else:
            u = min(int(np.searchsorted(np.cumsum(q), r * q.sum(), side="right")), m.K)
        if u == m.eos:
            break
        out.append(u)
        hist.append(u)
    return np.array(out, dtype=np.int64)


def greedy_continuation(m: NGramModel, prompt: Sequence[int], max_len: int = 100) -> np.ndarray:
    hist = [int(u) for u in prompt]
    out = []
    for _ in range(max_len):
        u = int(np.argmax(m.distribution(m.context(hist))))
        if u == m.eos:
            break
        out.append(u)
        hist.append(u)
    return np.array(out, dtype=np.int64)


def extend_utterance(prompt: EncodedUtterance, units: Sequence[int], m: NGramModel) -> EncodedUtterance:
    """Append sampled units with the model's median durations.

    A sampled unit equal to its predecessor is merged into it so the result
    stays deduplicated. Appended segments are unvoiced.
    """
    us = prompt.units.tolist()
    ds = prompt.durations.tolist()
    ps = prompt.pitch.tolist()
    vs = prompt.voiced.tolist()
    for u in units:
        d = int(m.durations[u])
        if us and us[-1] == u:
            ds[-1] += d
        else:
            us.append(int(u))
            ds.append(d)
            ps.append(0.0)
            vs.append(False)
    return EncodedUtterance(us, ds, ps, vs, prompt.frame_rate, prompt.K)


def continue_units(w: Waveform, cb: Codebook, m: NGramModel, cfg: FeatureConfig, seed: int = 0,
                   max_len: int = 50, temperature: float = 1.0) -> EncodedUtterance:
    """Encode a spoken prompt and append a sampled unit continuation."""
    if cb.K != m.K:
        raise VocabMismatch(f"codebook K={cb.K} but language model K={m.K}")
    prompt = dedup(quantize(log_mel(w, cfg), cb))
    cont = sample_continuation(m, prompt.units, max_len, temperature, seed)
    return extend_utterance(prompt, cont, m)


def continue_speech(w: Waveform, cb: Codebook, m: NGramModel, cfg: FeatureConfig,
                    synth: SynthesisConfig = SynthesisConfig(), seed: int = 0, max_len: int = 50,
                    temperature: float = 1.0) -> Waveform:
    """Prompt audio followed by a sampled continuation, both resynthesized."""
    full = continue_units(w, cb, m, cfg, seed, max_len, temperature)
    return synthesize(full, cb, cfg, synth)


def save_ngram(m: NGramModel, path: str | Path) -> None:
    """TLLM: magic, u32 order, u32 K, f64 k, u32 n, then n sorted
    (context..., outcome, count) records of u32, then K u32 median durations."""
    triples = sorted((ctx, u, c) for ctx, row in m.counts.items() for u, c in row.items())
    parts = [TLLM_MAGIC, struct.pack("<IIdI", m.order, m.K, m.smoothing_k, len(triples))]
    rec = struct.Struct("<" + "I" * (m.order + 1))
    for ctx, u, c in triples:
        parts.append(rec.pack(*ctx, u, c))
    parts.append(np.asarray(m.durations, dtype="<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_ngram(path: str | Path) -> NGramModel:
    data = Path(path).read_bytes()
    if data[:4] != TLLM_MAGIC:
        raise BadMagic(f"{path}: expected TLLM magic")
    head = struct.Struct("<IIdI")
    if len(data) < 4 + head.size:
        raise TruncatedFile(f"{path}: header truncated")
    order, K, k, n = head.unpack_from(data, 4)
    rec = struct.Struct("<" + "I" * (order + 1))
    off = 4 + head.size
    if len(data) < off + n * rec.size + 4 * K:
        raise TruncatedFile(f"{path}: body truncated")
    counts: dict = defaultdict(dict)
    for i in range(n):
        vals = rec.unpack_from(data, off + i * rec.size)
        counts[tuple(vals[:order - 1])][vals[order - 1]] = vals[order]
    off += n * rec.size
    durations = np.frombuffer(data, dtype="<u4", count=K, offset=off).astype(np.int64)
    return NGramModel(order, K, k, dict(counts), durations)
