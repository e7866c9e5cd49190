"""Bitstream serialization of encoded utterances and bitrate accounting.

Units are written either fixed-width (ceil(log2 K) bits) or with a
canonical Huffman code built from a unigram model; durations use Elias
gamma codes; pitch is an 8-bit uniform code over [-1.5, 1.5] with code 255
reserved for unvoiced segments.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (BadMagic, EmptyCorpus, ModelFingerprintMismatch, ModelMismatch,
                     TruncatedPayload, VersionMismatch)
from .streams import EncodedUtterance

TLUC_MAGIC = b"TLUC"
TLUC_VERSION = 1
_TLUC_HEADER = struct.Struct("<4sBBBHfI8s")

MODE_FIXED = 0
MODE_ENTROPY = 1
MODE_NAMES = {"fixed": MODE_FIXED, "entropy": MODE_ENTROPY}

FLAG_HAS_PITCH = 0x01
FLAG_PITCH_CLAMPED = 0x02

PITCH_RANGE = 1.5
PITCH_LEVELS = 255  # codes 0..254 are voiced
PITCH_UNVOICED = 255
PITCH_STEP = 2 * PITCH_RANGE / (PITCH_LEVELS - 1)


def fixed_width(K: int) -> int:
    """ceil(log2 K) computed exactly on integers."""
    return (K - 1).bit_length() if K > 1 else 0


@dataclass(frozen=True)
class UnigramModel:
    probs: np.ndarray
    counts: np.ndarray
    total: int
    smoothing_k: float = 0.5

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if abs(p.sum() - 1.0) > 1e-9 or np.any(p <= 0):
            raise ValueError("unigram probabilities must be positive and sum to 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    @property
    def K(self) -> int:
        return len(self.probs)

    def entropy(self) -> float:
        """H(P) in bits."""
        return float(-(self.probs * np.log2(self.probs)).sum())

    def fingerprint(self) -> bytes:
        h = hashlib.sha256(struct.pack("<I", self.K) + self.probs.astype("<f8").tobytes())
        return h.digest()[:8]

    def to_json(self) -> str:
        return json.dumps({"K": self.K, "smoothing_k": self.smoothing_k, "total": self.total,
                           "counts": self.counts.tolist(), "probs": self.probs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "UnigramModel":
        d = json.loads(text)
        return cls(np.array(d["probs"]), np.array(d["counts"]), d["total"], d["smoothing_k"])


def fit_unigram(corpus: Sequence[EncodedUtterance], smoothing_k: float = 0.5,
                K: int | None = None) -> UnigramModel:
    """Add-k smoothed unigram over the deduplicated unit streams.

    P(u) = (count(u) + k) / (total + k K). With k = 0 every unit must occur.
    """
    if not corpus:
        raise EmptyCorpus("cannot fit a unigram model on an empty corpus")
    if smoothing_k < 0:
        raise ValueError("smoothing_k must be >= 0")
    K = corpus[0].K if K is None else K
    counts = np.zeros(K, dtype=np.int64)
    for e in corpus:
        if e.K != K:
            raise ModelMismatch(f"utterance vocabulary {e.K} differs from {K}")
        counts += np.bincount(e.units, minlength=K)
    total = int(counts.sum())
    if total == 0 and smoothing_k == 0:
        raise EmptyCorpus("corpus has no tokens")
    if smoothing_k == 0 and np.any(counts == 0):
        raise ValueError("smoothing_k = 0 requires every unit to occur in the corpus")
    probs = (counts + smoothing_k) / (total + smoothing_k * K)
    return UnigramModel(probs, counts, total, smoothing_k)


def bitrate_fixed(n: int, l: float, K: int) -> float:
    if l <= 0:
        raise ValueError("duration must be positive")
    return n / l * fixed_width(K)


def bitrate_entropy(n: int, l: float, m: UnigramModel) -> float:
    if l <= 0:
        raise ValueError("duration must be positive")
    return n / l * m.entropy()


def huffman_lengths(probs: np.ndarray) -> np.ndarray:
    """Code length per symbol; ties merge the lowest symbol ids first."""
    K = len(probs)
    if K == 1:
        return np.ones(1, dtype=np.int64)
    heap = [(float(p), i, [i]) for i, p in enumerate(probs)]
    heapq.heapify(heap)
    lengths = np.zeros(K, dtype=np.int64)
    serial = K
    while len(heap) > 1:
        p1, _, s1 = heapq.heappop(heap)
        p2, _, s2 = heapq.heappop(heap)
        for s in s1 + s2:
            lengths[s] += 1
        heapq.heappush(heap, (p1 + p2, serial, s1 + s2))
        serial += 1
    return lengths


class HuffmanCode:
    """Canonical Huffman code: codewords assigned in (length, symbol) order."""

    def __init__(self, probs: np.ndarray):
        self.lengths = huffman_lengths(np.asarray(probs))
        order = sorted(range(len(self.lengths)), key=lambda s: (self.lengths[s], s))
        self.codes = np.zeros(len(self.lengths), dtype=object)
        # per length: first code value, index into `order` of its first symbol, symbol count
        self._first: dict[int, tuple[int, int, int]] = {}
        code, prev = 0, int(self.lengths[order[0]])
        for pos, s in enumerate(order):
            ln = int(self.lengths[s])
            code <<= ln - prev
            prev = ln
            self.codes[s] = code
            if ln not in self._first:
                self._first[ln] = (code, pos, 0)
            c0, p0, cnt = self._first[ln]
            self._first[ln] = (c0, p0, cnt + 1)
            code += 1
        self._order = order
        self.max_len = int(self.lengths.max())

    def encode(self, w: "BitWriter", symbol: int):
        w.write(int(self.codes[symbol]), int(self.lengths[symbol]))

    def decode(self, r: "BitReader") -> int:
        code = 0
        for ln in range(1, self.max_len + 1):
            code = (code << 1) | r.read(1)
            entry = self._first.get(ln)
            if entry is not None and entry[0] <= code < entry[0] + entry[2]:
                return self._order[entry[1] + code - entry[0]]
        raise TruncatedPayload("invalid Huffman codeword")

    def expected_length(self, probs: np.ndarray) -> float:
        return float(np.dot(probs, self.lengths))


class BitWriter:
    """MSB-first bit packer."""

    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._n = 0
        self.bits = 0

    def write(self, value: int, n: int):
        if n == 0:
            return
        self._acc = (self._acc << n) | (value & ((1 << n) - 1))
        self._n += n
        self.bits += n
        while self._n >= 8:
            self._n -= 8
            self._buf.append((self._acc >> self._n) & 0xFF)
        self._acc &= (1 << self._n) - 1

    def getvalue(self) -> bytes:
        out = bytes(self._buf)
        if self._n:
            out += bytes([(self._acc << (8 - self._n)) & 0xFF])
        return out


class BitReader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0  # bit position

    def read(self, n: int) -> int:
        if n == 0:
            return 0
        if self._pos + n > 8 * len(self._data):
            raise TruncatedPayload("payload ended before all symbols were decoded")
        v = 0
        for _ in range(n):
            byte = self._data[self._pos >> 3]
            v = (v << 1) | ((byte >> (7 - (self._pos & 7))) & 1)
            self._pos += 1
        return v


def elias_gamma_write(w: BitWriter, x: int):
    nb = x.bit_length()
    w.write(0, nb - 1)
    w.write(x, nb)


def elias_gamma_read(r: BitReader) -> int:
    zeros = 0
    while r.read(1) == 0:
        zeros += 1
        if zeros > 63:
            raise TruncatedPayload("runaway Elias-gamma prefix")
    return (1 << zeros) | r.read(zeros)


def quantize_pitch(values: np.ndarray, voiced: np.ndarray) -> tuple[np.ndarray, int]:
    """8-bit pitch codes and the number of clamped voiced values."""
    clamped = int(np.count_nonzero(voiced & (np.abs(values) > PITCH_RANGE)))
    v = np.clip(values, -PITCH_RANGE, PITCH_RANGE)
    codes = np.round((v + PITCH_RANGE) / PITCH_STEP).astype(np.int64)
    return np.where(voiced, codes, PITCH_UNVOICED), clamped


def dequantize_pitch(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    voiced = codes != PITCH_UNVOICED
    return np.where(voiced, codes * PITCH_STEP - PITCH_RANGE, 0.0), voiced


@dataclass
class Bitstream:
    K: int
    frame_rate: float
    n_segments: int
    coding_mode: int
    has_pitch: bool
    payload: bytes
    model_fingerprint: bytes = b"\0" * 8
    pitch_clamped: int = 0
    stream_bits: dict = field(default_factory=dict)

    @property
    def flags(self) -> int:
        return (FLAG_HAS_PITCH if self.has_pitch else 0) | (FLAG_PITCH_CLAMPED if self.pitch_clamped else 0)

    def to_bytes(self) -> bytes:
        head = _TLUC_HEADER.pack(TLUC_MAGIC, TLUC_VERSION, self.coding_mode, self.flags, self.K,
                                 self.frame_rate, self.n_segments, self.model_fingerprint)
        return head + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if data[:4] != TLUC_MAGIC:
            raise BadMagic("expected TLUC magic")
        if len(data) < _TLUC_HEADER.size:
            raise TruncatedPayload("header truncated")
        _, version, mode, flags, K, rate, n, fp = _TLUC_HEADER.unpack_from(data)
        if version != TLUC_VERSION:
            raise VersionMismatch(f"TLUC version {version}, expected {TLUC_VERSION}")
        if mode not in (MODE_FIXED, MODE_ENTROPY):
            raise BadMagic(f"unknown coding mode {mode}")
        return cls(K, rate, n, mode, bool(flags & FLAG_HAS_PITCH), data[_TLUC_HEADER.size:], fp,
                   int(bool(flags & FLAG_PITCH_CLAMPED)))

    @property
    def header_bits(self) -> int:
        return 8 * _TLUC_HEADER.size


def encode_bitstream(e: EncodedUtterance, m: UnigramModel | None = None) -> Bitstream:
    """Pack ``e`` into a bitstream: units, then durations, then pitch codes."""
    if m is not None and m.K != e.K:
        raise ModelMismatch(f"model vocabulary {m.K} != utterance vocabulary {e.K}")
    w = BitWriter()
    if m is None:
        width = fixed_width(e.K)
        for u in e.units:
            w.write(int(u), width)
    else:
        code = HuffmanCode(m.probs)
        for u in e.units:
            code.encode(w, int(u))
    unit_bits = w.bits
    for d in e.durations:
        elias_gamma_write(w, int(d))
    dur_bits = w.bits - unit_bits
    clamped = 0
    if e.has_pitch:
        codes, clamped = quantize_pitch(e.pitch, e.voiced)
        for c in codes:
            w.write(int(c), 8)
    pitch_bits = w.bits - unit_bits - dur_bits
    payload = w.getvalue()
    return Bitstream(
        K=e.K, frame_rate=float(np.float32(e.frame_rate)), n_segments=len(e),
        coding_mode=MODE_FIXED if m is None else MODE_ENTROPY, has_pitch=e.has_pitch,
        payload=payload, model_fingerprint=b"\0" * 8 if m is None else m.fingerprint(),
        pitch_clamped=clamped,
        stream_bits={"units": unit_bits, "durations": dur_bits, "pitch": pitch_bits,
                     "padding": 8 * len(payload) - w.bits},
    )


def decode_bitstream(b: Bitstream, m: UnigramModel | None = None) -> EncodedUtterance:
    if b.coding_mode == MODE_ENTROPY:
        if m is None or m.fingerprint() != b.model_fingerprint:
            raise ModelFingerprintMismatch("bitstream was entropy-coded with a different unigram model")
        if m.K != b.K:
            raise ModelMismatch(f"model vocabulary {m.K} != stream vocabulary {b.K}")
    r = BitReader(b.payload)
    n = b.n_segments
    if b.coding_mode == MODE_FIXED:
        width = fixed_width(b.K)
        units = [r.read(width) for _ in range(n)]
    else:
        code = HuffmanCode(m.probs)
        units = [code.decode(r) for _ in range(n)]
    durations = [elias_gamma_read(r) for _ in range(n)]
    if b.has_pitch:
        codes = np.array([r.read(8) for _ in range(n)], dtype=np.int64)
        pitch, voiced = dequantize_pitch(codes)
    else:
        pitch, voiced = np.zeros(n), np.zeros(n, dtype=bool)
    return EncodedUtterance(units, durations, pitch, voiced, b.frame_rate, b.K)


def write_bitstream(b: Bitstream, path: str | Path) -> None:
    Path(path).write_bytes(b.to_bytes())


def read_bitstream(path: str | Path) -> Bitstream:
    return Bitstream.from_bytes(Path(path).read_bytes())


@dataclass
class BitrateReport:
    n_tokens: int
    audio_seconds: float
    K: int
    fixed_bits_per_sec: float
    entropy_bits_per_sec: float
    actual_bits_per_sec: float
    streams: dict

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n_tokens", "audio_seconds", "K", "fixed_bits_per_sec",
                                              "entropy_bits_per_sec", "actual_bits_per_sec", "streams")}


def bitrate_report(utterances: Sequence[EncodedUtterance], m: UnigramModel | None,
                   audio_durations: Sequence[float]) -> BitrateReport:
    """Formula bitrates plus the measured payload rate of the actual codec.

    ``actual_bits_per_sec`` counts every payload bit (units, durations,
    pitch and byte padding) but not the fixed 25-byte headers, which are
    reported separately under ``streams['header']``.
    """
    if not utterances:
        raise EmptyCorpus("bitrate report needs at least one utterance")
    if len(audio_durations) != len(utterances):
        raise ValueError("one audio duration per utterance is required")
    l = float(sum(audio_durations))
    K = utterances[0].K
    if m is None:
        m = fit_unigram(utterances)
    n = sum(len(e) for e in utterances)
    totals = {"units": 0, "durations": 0, "pitch": 0, "padding": 0, "header": 0}
    for e in utterances:
        b = encode_bitstream(e, m)
        for k, v in b.stream_bits.items():
            totals[k] += v
        totals["header"] += b.header_bits
    payload = totals["units"] + totals["durations"] + totals["pitch"] + totals["padding"]
    per_sec = {k: v / l for k, v in totals.items()}
    return BitrateReport(n, l, K, bitrate_fixed(n, l, K), bitrate_entropy(n, l, m), payload / l, per_sec)


def entropy_bits(tokens: np.ndarray, m: UnigramModel) -> float:
    """Ideal code length of ``tokens`` under ``m`` in bits."""
    return float(-np.log2(m.probs[np.asarray(tokens)]).sum())


def huffman_bits(tokens: np.ndarray, m: UnigramModel) -> int:
    return int(HuffmanCode(m.probs).lengths[np.asarray(tokens)].sum())

