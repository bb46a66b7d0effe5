#!/usr/bin/env python3
"""
Tests for the BEV patch quantizer: patching, k-means codebook fitting,
encode/decode and the codebook file format.
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from bev_quantizer import (
    BevClass,
    BevConfig,
    BevGrid,
    Codebook,
    decode,
    encode,
    fit_codebook,
    fit_from_grids,
    load_codebook,
    patchify,
    reconstruction_accuracy,
    save_codebook,
    unpatchify,
)
from errors import ConfigurationError, DomainError, SizeError, ValidationError
from sim_world import build_scene, rasterize_bev


def _road_grid(size=16, shift=0):
    cells = np.zeros((size, size), dtype=np.uint8)
    cells[:, 4 + shift : 12 + shift] = BevClass.DRIVABLE
    cells[:, 7 + shift : 9 + shift] = BevClass.CENTER_BAND
    cells[2:4, 2:4] = BevClass.OBSTACLE
    cells[size // 2, size // 2] = BevClass.EGO
    return BevGrid(cells, resolution=2.0)


def test_grid_validation():
    with pytest.raises(DomainError):
        BevGrid(np.full((4, 4), 9))
    with pytest.raises(SizeError):
        BevGrid(np.zeros(4))
    with pytest.raises(ValueError):
        BevConfig(size=20, patch=8)
    assert BevConfig().tokens_per_frame == 64


def test_patchify_shapes_and_inverse():
    grid = _road_grid()
    z = patchify(grid, 4, 4)
    assert z.shape == (4, 4, 4 * 4 * 5)
    assert np.all(z.sum(axis=-1) == 16)
    back = unpatchify(z, 4, 4, resolution=grid.resolution)
    assert np.array_equal(back.cells, grid.cells)
    with pytest.raises(SizeError):
        patchify(grid, 5, 5)


def test_codebook_with_every_distinct_patch_is_lossless():
    grid = _road_grid()
    vectors = patchify(grid, 4, 4).reshape(-1, 80)
    K = len(np.unique(vectors, axis=0))
    codebook = fit_codebook(vectors, K=K, seed=0, patch_h=4, patch_w=4)
    assert codebook.K == K
    tokens = encode(grid, codebook)
    assert tokens.shape == (4, 4)
    assert reconstruction_accuracy(grid, codebook) == 1.0
    assert np.array_equal(decode(tokens, codebook).cells, grid.cells)


def test_fit_is_deterministic_for_a_seed():
    grids = [_road_grid(shift=s) for s in range(-2, 3)]
    config = BevConfig(size=16, resolution=2.0, patch=4, codebook_size=6, n_init=2, max_iter=20)
    a = fit_from_grids(grids, config, seed=3)
    b = fit_from_grids(grids, config, seed=3)
    assert np.array_equal(a.entries, b.entries)
    assert np.array_equal(encode(grids[0], a), encode(grids[0], b))


def test_single_entry_codebook_is_the_mean_patch():
    grid = _road_grid()
    vectors = patchify(grid, 4, 4).reshape(-1, 80)
    codebook = fit_codebook(vectors, K=1, patch_h=4, patch_w=4)
    assert np.allclose(codebook.entries[0], vectors.mean(axis=0))
    assert np.all(encode(grid, codebook) == 0)


def test_codebook_larger_than_sample_count_is_rejected():
    vectors = patchify(_road_grid(), 4, 4).reshape(-1, 80)
    with pytest.raises(ConfigurationError):
        fit_codebook(vectors, K=17, patch_h=4, patch_w=4)
    with pytest.raises(SizeError):
        fit_from_grids([], BevConfig())


def test_decode_rejects_unknown_tokens():
    grid = _road_grid()
    codebook = fit_codebook(patchify(grid, 4, 4).reshape(-1, 80), K=2, patch_h=4, patch_w=4)
    with pytest.raises(DomainError):
        decode(np.full((4, 4), 2), codebook)


def test_codebook_file_round_trip(tmp_path):
    grid = _road_grid()
    vectors = patchify(grid, 4, 4).reshape(-1, 80)
    K = len(np.unique(vectors, axis=0))
    codebook = fit_codebook(vectors, K=K, patch_h=4, patch_w=4)
    path = save_codebook(codebook, str(tmp_path / "bev" / "codebook.bin"))
    loaded = load_codebook(path, expected_k=K)
    assert loaded.K == K and loaded.patch_h == 4 and loaded.n_classes == 5
    assert np.allclose(loaded.entries, codebook.entries, atol=1e-6)
    assert np.array_equal(encode(grid, loaded), encode(grid, codebook))
    with pytest.raises(ValidationError):
        load_codebook(path, expected_k=K + 1)


def test_codebook_file_with_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTACODEBOOK")
    with pytest.raises(ValidationError):
        load_codebook(str(path))


def _objective(vectors, entries):
    dist = ((vectors[:, None, :] - entries[None, :, :]) ** 2).sum(axis=-1)
    return float(dist.min(axis=1).sum())


def _best_two_partition(vectors):
    n = len(vectors)
    best = np.inf
    for mask in range(1, 2 ** (n - 1)):
        second = np.array([(mask >> i) & 1 for i in range(n - 1)] + [0], dtype=bool)
        cost = sum(float(((part - part.mean(axis=0)) ** 2).sum()) for part in (vectors[second], vectors[~second]))
        best = min(best, cost)
    return best


def test_small_instance_matches_bruteforce_partition():
    for seed in range(60):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        vectors = np.eye(5)[rng.integers(0, 5, (n, 2, 2))].reshape(n, 20)
        codebook = fit_codebook(vectors, K=2, seed=seed, patch_h=2, patch_w=2)
        assert _objective(vectors, codebook.entries) == pytest.approx(_best_two_partition(vectors), abs=1e-9)


def test_duplicated_entries_resolve_to_the_lowest_index():
    grid = _road_grid()
    vectors = patchify(grid, 4, 4).reshape(-1, 80)
    codebook = fit_codebook(vectors, K=len(np.unique(vectors, axis=0)), patch_h=4, patch_w=4)
    tokens = encode(grid, codebook)
    doubled = Codebook(np.vstack([codebook.entries[:1], codebook.entries]), 4, 4)
    assert np.array_equal(encode(grid, doubled), np.where(tokens == 0, 0, tokens + 1))


def _random_grid(rng, size=16):
    return BevGrid(rng.integers(0, 5, (size, size)), resolution=2.0)


def test_encode_matches_linear_scan():
    rng = np.random.default_rng(4)
    codebook = Codebook(rng.random((16, 80)), 4, 4)
    for _ in range(5):
        grid = _random_grid(rng)
        z = patchify(grid, 4, 4).reshape(-1, 80)
        expected = []
        for vector in z:
            best, best_d = 0, np.inf
            for k, entry in enumerate(codebook.entries):
                d = float(np.sum((vector - entry) ** 2))
                if d < best_d:
                    best, best_d = k, d
            expected.append(best)
        assert np.array_equal(encode(grid, codebook).reshape(-1), expected)


def test_encode_is_permutation_equivariant():
    rng = np.random.default_rng(5)
    codebook = Codebook(rng.random((16, 80)), 4, 4)
    perm = rng.permutation(16)
    inverse = np.argsort(perm)
    grid = _random_grid(rng)
    assert np.array_equal(encode(grid, Codebook(codebook.entries[perm], 4, 4)), inverse[encode(grid, codebook)])


def test_encoding_a_reconstruction_returns_the_same_tokens():
    grid = _road_grid()
    patches = np.unique(patchify(grid, 4, 4).reshape(-1, 80), axis=0)
    lossy = Codebook(patches[:3], 4, 4)
    tokens = encode(grid, lossy)
    recon = decode(tokens, lossy, grid.resolution)
    assert reconstruction_accuracy(grid, lossy) < 1.0
    assert np.array_equal(encode(recon, lossy), tokens)


def test_accuracy_does_not_drop_with_a_larger_codebook():
    grids = []
    for seed in range(6):
        scene = build_scene(seed, "hard")
        for i in range(4):
            pose = scene.centerline.point_at(scene.spawn_s + 6.0 * i)[0]
            grids.append(BevGrid(rasterize_bev(scene, pose, 0.0, 32, 1.0).cells, resolution=1.0))
    vectors = np.concatenate([patchify(g, 4, 4).reshape(-1, 80) for g in grids])

    def mean_accuracy(K, seed):
        codebook = fit_codebook(vectors, K=K, seed=seed, patch_h=4, patch_w=4)
        return float(np.mean([reconstruction_accuracy(g, codebook) for g in grids]))

    small = np.mean([mean_accuracy(8, seed) for seed in range(5)])
    large = np.mean([mean_accuracy(64, seed) for seed in range(5)])
    assert 0.0 <= small <= large <= 1.0
