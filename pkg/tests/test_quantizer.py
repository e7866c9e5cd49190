from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unit_codec.errors import BadMagic, DimensionMismatch, NonFiniteInput, TooFewPoints
from unit_codec.features import FeatureSequence
from unit_codec.quantizer import Codebook, distortion, kmeans_train, load_codebook, quantize, save_codebook


def brute_force(frames, centroids):
    best = np.zeros(len(frames), dtype=np.int64)
    for i, f in enumerate(frames):
        d = [float(np.sum((f - c) ** 2)) for c in centroids]
        best[i] = d.index(min(d))
    return best


def blobs(seed, n_per=100, sigma=0.1, spacing=10.0, d=2):
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0] * d, [spacing] + [0.0] * (d - 1), [0.0, spacing] + [0.0] * (d - 2)])
    x = np.concatenate([c + sigma * rng.standard_normal((n_per, d)) for c in centres])
    return x, np.repeat(np.arange(3), n_per), centres


def test_two_separable_clusters():
    cb = kmeans_train(np.array([[0.0], [0], [0], [10], [10], [10]]), 2)
    assert sorted(cb.centroids[:, 0]) == [0.0, 10.0]
    assert cb.training_meta["final_distortion"] == 0


def test_K_equals_N():
    x = np.random.default_rng(3).normal(size=(7, 3))
    cb = kmeans_train(x, 7)
    assert distortion(x, cb) < 1e-12


def test_blobs_recovered():
    x, truth, centres = blobs(0)
    cb = kmeans_train(x, 3, seed=1)
    labels = quantize(FeatureSequence(x, 50), cb).units
    gen = brute_force(x, centres)
    assert np.array_equal(gen, truth)
    for k in range(3):
        assert len(set(labels[truth == k])) == 1
    assert len(set(labels)) == 3


def test_errors():
    with pytest.raises(TooFewPoints):
        kmeans_train(np.zeros((3, 2)), 5)
    with pytest.raises(TooFewPoints):
        kmeans_train(np.zeros((10, 2)), 3)  # fewer distinct points than K
    with pytest.raises(NonFiniteInput):
        kmeans_train(np.array([[0.0], [np.nan], [1.0]]), 2)
    cb = Codebook(np.eye(3))
    with pytest.raises(DimensionMismatch):
        quantize(FeatureSequence(np.zeros((2, 4)), 50), cb)
    with pytest.raises(DimensionMismatch):
        distortion(np.zeros((2, 4)), cb)


def test_quantize_exact_and_ties():
    c = np.random.default_rng(0).normal(size=(10, 4))
    cb = Codebook(c)
    assert quantize(FeatureSequence(cb.centroids[7:8], 50), cb).units[0] == 7
    tie = Codebook(np.array([[9.0, 9], [9, 9.5], [-1, 0], [5, 5], [4, 4], [1, 0]]))
    assert quantize(FeatureSequence(np.zeros((1, 2)), 50), tie).units[0] == 2


def test_distortion_examples():
    cb = Codebook(np.array([[0.0, 0.0], [10.0, 10.0]]))
    assert distortion(cb.centroids, cb) == 0
    assert distortion(np.array([[3.0, 0.0]]), cb) == 9.0


def test_trained_beats_random_codebooks():
    rng = np.random.default_rng(5)
    x = np.concatenate([rng.normal(m, 1.0, size=(80, 3)) for m in (-4, 0, 4, 8)])
    for seed in range(20):
        trained = kmeans_train(x, 4, seed=seed)
        pick = np.random.default_rng(seed).choice(len(x), 4, replace=False)
        assert distortion(x, trained) <= distortion(x, Codebook(x[pick]))


def test_larger_K_lower_distortion():
    x = np.random.default_rng(9).normal(size=(2000, 4))
    best50 = min(distortion(x, kmeans_train(x, 50, seed=s, max_iters=30)) for s in range(5))
    best100 = min(distortion(x, kmeans_train(x, 100, seed=s, max_iters=30)) for s in range(5))
    assert best50 >= best100


def test_worker_count_invariance():
    x = np.random.default_rng(1).normal(size=(5000, 6))
    a = kmeans_train(x, 20, seed=3, workers=1)
    b = kmeans_train(x, 20, seed=3, workers=4)
    assert np.array_equal(a.centroids, b.centroids)
    assert a.training_meta["distortions"] == b.training_meta["distortions"]


def test_empty_cluster_reseeded():
    # a far outlier start forces an empty cluster on the first Lloyd step in some seeds
    x = np.r_[np.zeros((50, 1)), np.ones((50, 1)), [[0.5]]]
    for seed in range(10):
        cb = kmeans_train(x, 3, seed=seed)
        assert len(np.unique(cb.centroids, axis=0)) == 3


def test_tlcb_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(200, 5))
    cb = kmeans_train(x, 8, fingerprint=b"\x01" * 32)
    save_codebook(cb, tmp_path / "c.tlcb")
    back = load_codebook(tmp_path / "c.tlcb")
    assert back == cb and back.training_meta["seed"] == 0
    (tmp_path / "bad.tlcb").write_bytes(b"NOPE" + (tmp_path / "c.tlcb").read_bytes()[4:])
    with pytest.raises(BadMagic):
        load_codebook(tmp_path / "bad.tlcb")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(2, 12))
def test_lloyd_history_non_increasing(seed, K):
    x = np.random.default_rng(seed).normal(size=(150, 3))
    h = kmeans_train(x, K, seed=seed).training_meta["distortions"]
    assert all(b <= a for a, b in zip(h, h[1:]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_quantize_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cb = Codebook(rng.normal(size=(12, 3)))
    f = rng.normal(size=(40, 3))
    assert np.array_equal(quantize(FeatureSequence(f, 50), cb).units, brute_force(f, cb.centroids))
