import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from copvae import nn, oracle
from copvae.errors import ConfigurationError


def linear_decoder(n_w=2):
    """F([z, w]) = [z1, z2, z1 + z2 + w1, z1 - z2], an injective map in z."""
    n_in = 2 + n_w
    layers = nn.mlp_spec(n_in, (), (), 4)
    wmat = np.zeros((n_in, 4))
    wmat[0, 0] = wmat[1, 1] = 1.0
    wmat[0, 2] = wmat[1, 2] = wmat[2, 2] = 1.0
    wmat[0, 3], wmat[1, 3] = 1.0, -1.0
    return nn.Mlp(layers, [wmat, np.zeros(4)], frozen=True)


def synth(z_star, w, dec):
    return nn.predict(dec, np.hstack([z_star, w])[None])[0]


def test_grid_shape_and_endpoints():
    z = oracle.unit_grid(5, 2)
    assert z.shape == (25, 2)
    assert z.min() == 0.0 and z.max() == 1.0
    assert np.array_equal(z[1], [0.0, 0.25])


def test_refined_grid_contains_coarse():
    coarse = {tuple(p) for p in oracle.unit_grid(11, 2).round(12)}
    fine = {tuple(p) for p in oracle.unit_grid(21, 2).round(12)}
    assert coarse <= fine


def test_discrepancies_nonnegative_and_use_same_w(rng):
    dec = linear_decoder()
    w = np.array([0.3, 0.7])
    m = rng.uniform(size=4)
    z, delta = oracle.grid_discrepancies(m, w, dec, n_grid=21)
    assert np.all(delta >= 0)
    pred = nn.predict(dec, np.hstack([z, np.tile(w, (z.shape[0], 1))]))
    assert np.allclose(delta, ((pred - m) ** 2).sum(axis=1), atol=1e-15)


def test_decoder_width_mismatch():
    with pytest.raises(ConfigurationError):
        oracle.grid_discrepancies(np.zeros(4), np.zeros(5), linear_decoder())


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_min_delta_near_truth(seed):
    r = np.random.default_rng(seed)
    dec = linear_decoder()
    z_star, w = r.uniform(size=2), r.uniform(size=2)
    z, delta = oracle.grid_discrepancies(synth(z_star, w, dec), w, dec, n_grid=51)
    best = z[np.argmin(delta)]
    assert np.max(np.abs(best - z_star)) <= 1.0 / 50


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(3, 30))
def test_refinement_never_raises_min_delta(seed, n):
    r = np.random.default_rng(seed)
    dec = linear_decoder()
    m, w = r.uniform(size=4), r.uniform(size=2)
    _, coarse = oracle.grid_discrepancies(m, w, dec, n_grid=n)
    _, fine = oracle.grid_discrepancies(m, w, dec, n_grid=2 * n - 1)
    assert fine.min() <= coarse.min()


def test_weights_normalized_and_keep_smallest(rng):
    dec = linear_decoder()
    gt = oracle.build_ground_truth(rng.uniform(size=4), rng.uniform(size=2), dec,
                                   n_grid=31, n_f=50)
    assert gt.points.shape == (50, 2)
    assert abs(gt.weights.sum() - 1.0) <= 1e-12
    assert np.all(gt.weights >= 0)
    assert np.all(np.diff(gt.weights) <= 1e-15)


def test_weights_inverse_to_delta():
    z = np.array([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
    delta = np.array([1.0, 2.0, 4.0])
    gt = oracle.ground_truth_from_scores(z, delta, 3, 0.01)
    assert np.allclose(gt.weights, np.array([4.0, 2.0, 1.0]) / 7.0, rtol=1e-14)


def test_equal_delta_gives_uniform_weights():
    z = oracle.unit_grid(4, 2)
    gt = oracle.ground_truth_from_scores(z, np.full(16, 0.3), 10, 0.1)
    assert np.allclose(gt.weights, 0.1, rtol=1e-14)


def test_zero_delta_is_floored():
    z = np.array([[0.5, 0.5], [0.2, 0.2]])
    gt = oracle.ground_truth_from_scores(z, np.array([0.0, 1e-6]), 2, 0.01)
    assert np.all(np.isfinite(gt.weights))
    assert gt.weights[0] / gt.weights[1] == pytest.approx(1e6, rel=1e-12)


def test_too_many_points(rng):
    with pytest.raises(ConfigurationError):
        oracle.build_ground_truth(rng.uniform(size=4), rng.uniform(size=2), linear_decoder(),
                                  n_grid=5, n_f=26)


def test_scott_bandwidth():
    pts = np.random.default_rng(0).normal(size=(300, 2)) * [0.1, 0.2]
    s = oracle.scott_bandwidth(pts, 0.01)
    h = 300 ** (-1 / 6) * pts.std(axis=0, ddof=1)
    assert np.allclose(np.diag(s), h ** 2)
    assert s[0, 1] == 0.0


def test_single_point_is_one_kernel():
    z = np.array([[0.4, 0.6], [0.9, 0.9]])
    gt = oracle.ground_truth_from_scores(z, np.array([0.1, 0.2]), 1, 0.05)
    q = np.array([[0.45, 0.58]])
    want = math.exp(-0.5 * ((0.05 / 0.05) ** 2 + (0.02 / 0.05) ** 2)) / (2 * math.pi * 0.05 ** 2)
    assert oracle.gt_density(gt, q)[0] == pytest.approx(want, rel=1e-13)


def test_density_matches_loop(rng):
    pts = rng.uniform(size=(40, 2))
    gt = oracle.ground_truth_from_scores(pts, rng.uniform(0.1, 1, 40), 40, 0.02)
    z = rng.uniform(-0.2, 1.2, size=(30, 2))
    got = oracle.gt_density(gt, z, chunk=7)
    s_inv = np.linalg.inv(gt.bandwidth)
    norm = 1.0 / (2 * math.pi * math.sqrt(np.linalg.det(gt.bandwidth)))
    for i, zi in enumerate(z):
        total = 0.0
        for p, wj in zip(gt.points, gt.weights):
            diff = zi - p
            total += wj * norm * math.exp(-0.5 * diff @ s_inv @ diff)
        assert got[i] == pytest.approx(total, rel=1e-12, abs=1e-300)


def test_grid_density_matches_pointwise(rng):
    pts = rng.uniform(size=(30, 2))
    gt = oracle.ground_truth_from_scores(pts, rng.uniform(0.1, 1, 30), 30, 0.02)
    axis = np.linspace(0, 1, 13)
    grid = oracle.gt_density_grid(gt, axis)
    zz = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    assert np.allclose(grid, oracle.gt_density(gt, zz), rtol=1e-12)


def test_kernel_decay(rng):
    dec = linear_decoder()
    gt = oracle.build_ground_truth(rng.uniform(0.3, 0.7, size=4), rng.uniform(size=2), dec,
                                   n_grid=41, n_f=30)
    top = gt.mode_point()
    far = top + 3 * gt.h
    assert oracle.gt_density(gt, top[None])[0] >= oracle.gt_density(gt, far[None])[0]
    assert np.all(oracle.gt_density(gt, rng.uniform(-1, 2, size=(100, 2))) >= 0)


def test_filtering_invariance(rng):
    dec = linear_decoder()
    m, w = rng.uniform(size=4), rng.uniform(size=2)
    small = oracle.build_ground_truth(m, w, dec, n_grid=31, n_f=40)
    big = oracle.build_ground_truth(m, w, dec, n_grid=31, n_f=90)
    assert np.array_equal(big.points[:40], small.points)
    ratio = big.weights[:40] / small.weights
    assert np.allclose(ratio, ratio[0], rtol=1e-12)


def test_interior_mass(rng):
    dec = linear_decoder()
    z_star = np.array([0.45, 0.55])
    w = np.array([0.2, 0.1])
    gt = oracle.build_ground_truth(synth(z_star, w, dec), w, dec, n_grid=101, n_f=300)
    mc = oracle.domain_mass(gt, 100_000, rng)
    assert abs(mc - 1.0) <= 0.02
    assert abs(mc - oracle.domain_mass_exact(gt)) <= 0.01


def test_argmax_near_truth():
    dec = linear_decoder()
    z_star = np.array([0.3, 0.8])
    w = np.array([0.5, 0.5])
    gt = oracle.build_ground_truth(synth(z_star, w, dec), w, dec, n_grid=101, n_f=200)
    assert np.max(np.abs(oracle.grid_argmax(gt, 101) - z_star)) <= 2 / 100


def test_sampling_matches_density(rng):
    pts = np.array([[0.3, 0.3], [0.7, 0.6]])
    gt = oracle.ground_truth_from_scores(pts, np.array([1.0, 3.0]), 2, 0.05)
    draws = oracle.gt_sample(gt, 40_000, rng)
    mean = gt.weights @ pts
    assert np.allclose(draws.mean(axis=0), mean, atol=0.005)
    spread = gt.bandwidth + (pts - mean).T @ np.diag(gt.weights) @ (pts - mean)
    assert np.allclose(np.cov(draws.T), spread, atol=0.003)
