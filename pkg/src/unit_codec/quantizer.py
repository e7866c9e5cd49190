"""k-means codebooks and nearest-centroid quantization."""
from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagic, DimensionMismatch, NonFiniteInput, TooFewPoints,
                     TruncatedFile, VersionMismatch)
from .features import FeatureSequence

log = logging.getLogger(__name__)

TLCB_MAGIC = b"TLCB"
TLCB_VERSION = 1
_TLCB_HEADER = struct.Struct("<4sIII32s")

ASSIGN_CHUNK = 4096


@dataclass(frozen=True)
class Codebook:
    """K x d centroid matrix.

    Centroids are held at float32 precision (stored as float64) so a codebook
    survives a TLCB round trip bit-exactly.
    """

    centroids: np.ndarray
    fingerprint: bytes = b"\0" * 32
    training_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float32).astype(np.float64)
        if c.ndim != 2 or c.shape[0] < 2:
            raise ValueError(f"codebook needs at least 2 centroids, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise NonFiniteInput("codebook has non-finite centroids")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.fingerprint == other.fingerprint and np.array_equal(self.centroids, other.centroids)

    __hash__ = None


@dataclass(frozen=True)
class UnitSequence:
    units: np.ndarray
    frame_rate: float
    K: int

    def __post_init__(self):
        u = np.asarray(self.units, dtype=np.int64).reshape(-1)
        if len(u) and (u.min() < 0 or u.max() >= self.K):
            raise ValueError(f"unit ids must lie in [0, {self.K})")
        object.__setattr__(self, "units", u)

    def __len__(self):
        return len(self.units)


def _sq_dists_exact(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest(frames: np.ndarray, centroids: np.ndarray, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Index and squared distance of the nearest centroid, ties to the lowest index.

    Distances are formed from explicit differences, so exact ties stay exact.
    """
    n = len(frames)
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    for s in range(0, n, chunk):
        d = _sq_dists_exact(frames[s:s + chunk], centroids)
        j = np.argmin(d, axis=1)
        idx[s:s + chunk] = j
        dist[s:s + chunk] = d[np.arange(len(j)), j]
    return idx, dist


def _assign_fast(x: np.ndarray, x_sq: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = x_sq[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    j = np.argmin(d, axis=1)
    return j, np.maximum(d[np.arange(len(j)), j], 0.0)


def _kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each step draws 2 + ln K candidates by D^2 weighting
    and keeps the one that lowers the potential most."""
    n = len(x)
    trials = 2 + int(np.log(K))
    x_sq = np.einsum("ij,ij->i", x, x)
    chosen = [int(rng.integers(n))]
    d2 = np.einsum("ij,ij->i", x - x[chosen[0]], x - x[chosen[0]])
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            raise TooFewPoints(f"data has fewer than K={K} distinct points")
        cdf = np.cumsum(d2)
        cand = np.searchsorted(cdf, rng.random(trials) * total, side="right")
        cand = np.minimum(cand, n - 1)
        for j, i in enumerate(cand):
            while d2[i] <= 0:  # guard against landing on a zero-mass point at a cdf edge
                i = (i + 1) % n
            cand[j] = i
        xc = x[cand]
        dist = x_sq[None, :] - 2.0 * (xc @ x.T) + x_sq[cand][:, None]
        cand_d2 = np.minimum(d2[None, :], np.maximum(dist, 0.0))
        i = int(cand[np.argmin(cand_d2.sum(axis=1))])
        chosen.append(i)
        diff = x - x[i]  # exact row for the kept point so duplicates get zero mass
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return x[chosen].copy()


def kmeans_train(frames, K: int, max_iters: int = 100, rel_tol: float = 1e-4, seed: int = 0,
                 workers: int = 1, fingerprint: bytes = b"\0" * 32, extra_meta: dict | None = None) -> Codebook:
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops once the relative distortion improvement drops below ``rel_tol``
    or after ``max_iters`` Lloyd steps. An emptied cluster is moved onto the
    point farthest from its current centroid. ``training_meta['distortions']``
    holds the per-iteration distortion and is non-increasing: a step that
    fails to improve (round-off at convergence) is discarded, not recorded.

    Assignment runs over fixed chunks whose partial sums are reduced in chunk
    order, so ``workers`` changes speed but never the result.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("frames must be an N x d matrix")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("training frames contain non-finite values")
    n, d = x.shape
    if K < 2:
        raise ValueError("K must be at least 2")
    if n < K:
        raise TooFewPoints(f"{n} points cannot support K={K} clusters")

    rng = np.random.default_rng(seed)
    c = _kmeanspp(x, K, rng)
    x_sq = np.einsum("ij,ij->i", x, x)
    bounds = [(s, min(s + ASSIGN_CHUNK, n)) for s in range(0, n, ASSIGN_CHUNK)]

    def assign_chunk(b, cent):
        s, e = b
        j, dist = _assign_fast(x[s:e], x_sq[s:e], cent)
        sums = np.zeros((K, d))
        np.add.at(sums, j, x[s:e])
        return j, dist, sums, np.bincount(j, minlength=K)

    def assign(cent):
        if workers > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda b: assign_chunk(b, cent), bounds))
        else:
            parts = [assign_chunk(b, cent) for b in bounds]
        labels = np.concatenate([p[0] for p in parts])
        dist = np.concatenate([p[1] for p in parts])
        sums = np.zeros((K, d))
        counts = np.zeros(K, dtype=np.int64)
        for p in parts:
            sums += p[2]
            counts += p[3]
        return labels, dist, sums, counts

    labels, dist, sums, counts = assign(c)
    history = [float(dist.mean())]
    reseeded = 0
    iters = 0
    for iters in range(1, max_iters + 1):
        new_c = c.copy()
        live = counts > 0
        new_c[live] = sums[live] / counts[live, None]
        for k in np.flatnonzero(~live):
            far = int(np.argmax(dist))
            new_c[k] = x[far]
            dist[far] = 0.0
            reseeded += 1
        new_labels, new_dist, new_sums, new_counts = assign(new_c)
        new_D = float(new_dist.mean())
        prev = history[-1]
        if new_D > prev:
            break
        c, labels, dist, sums, counts = new_c, new_labels, new_dist, new_sums, new_counts
        history.append(new_D)
        if prev == 0 or (prev - new_D) / prev < rel_tol:
            break

    meta = {"iters_run": iters, "final_distortion": history[-1], "seed": seed,
            "distortions": history, "reseeded": reseeded, "n_points": n}
    if extra_meta:
        meta.update(extra_meta)
    cb = Codebook(c, fingerprint, meta)
    u = np.unique(cb.centroids, axis=0)
    if len(u) < K:
        raise TooFewPoints(f"only {len(u)} distinct centroids survived training for K={K}")
    return cb


def _check_dim(frames: np.ndarray, cb: Codebook):
    if frames.ndim != 2 or frames.shape[1] != cb.dim:
        raise DimensionMismatch(f"frame dim {frames.shape[-1]} != codebook dim {cb.dim}")


def quantize(f: FeatureSequence, cb: Codebook) -> UnitSequence:
    _check_dim(f.frames, cb)
    if f.fingerprint != cb.fingerprint:
        log.warning("feature fingerprint does not match codebook fingerprint")
    idx, _ = nearest(f.frames, cb.centroids)
    return UnitSequence(idx, f.frame_rate, cb.K)


def distortion(frames, cb: Codebook) -> float:
    """Mean squared distance from each frame to its nearest centroid."""
    x = np.asarray(frames, dtype=np.float64)
    _check_dim(x, cb)
    if len(x) == 0:
        return 0.0
    return float(nearest(x, cb.centroids)[1].mean())


def save_codebook(cb: Codebook, path: str | Path) -> None:
    """TLCB: magic, u32 version, u32 K, u32 d, 32-byte fingerprint,
    K*d float32 row-major, u32 length + JSON training metadata."""
    meta = json.dumps(cb.training_meta, sort_keys=True).encode()
    blob = _TLCB_HEADER.pack(TLCB_MAGIC, TLCB_VERSION, cb.K, cb.dim, cb.fingerprint)
    blob += cb.centroids.astype("<f4").tobytes()
    blob += struct.pack("<I", len(meta)) + meta
    Path(path).write_bytes(blob)


def load_codebook(path: str | Path) -> Codebook:
    data = Path(path).read_bytes()
    if data[:4] != TLCB_MAGIC:
        raise BadMagic(f"{path}: expected TLCB magic")
    if len(data) < _TLCB_HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, K, d, fp = _TLCB_HEADER.unpack_from(data)
    if version != TLCB_VERSION:
        raise VersionMismatch(f"{path}: TLCB version {version}, expected {TLCB_VERSION}")
    off = _TLCB_HEADER.size
    end = off + 4 * K * d
    if len(data) < end + 4:
        raise TruncatedFile(f"{path}: centroid block truncated")
    c = np.frombuffer(data, dtype="<f4", count=K * d, offset=off).reshape(K, d)
    (n,) = struct.unpack_from("<I", data, end)
    if len(data) < end + 4 + n:
        raise TruncatedFile(f"{path}: metadata truncated")
    meta = json.loads(data[end + 4:end + 4 + n]) if n else {}
    return Codebook(c, fp, meta)
