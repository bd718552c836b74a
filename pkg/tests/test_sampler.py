import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsp.geometry import Domain, PointCloud
from nsp.sampler import BatchSampler, SamplerConfig, add_gaussian_noise, domain_batch, subsample, surface_batch


def test_config_validation():
    assert SamplerConfig() == SamplerConfig(20000, 20000, 0)
    with pytest.raises(ValueError):
        SamplerConfig(surface_batch=0)


def test_small_cloud_used_whole(rng):
    pts = rng.normal(size=(5, 3))
    assert np.array_equal(surface_batch(PointCloud(pts), 20000, rng), pts)


def test_surface_batch_seeded_and_members(rng):
    pts = rng.normal(size=(100, 3))
    a = surface_batch(pts, 50, np.random.default_rng(3))
    b = surface_batch(pts, 50, np.random.default_rng(3))
    assert np.array_equal(a, b)
    members = {tuple(p) for p in pts}
    assert all(tuple(p) in members for p in a)
    with pytest.raises(ValueError):
        surface_batch(np.zeros((0, 3)), 10, rng)


def test_surface_batch_uniform_frequencies():
    n, draws = 8, 1_000_000
    pts = np.column_stack([np.arange(n, dtype=float), np.zeros(n), np.zeros(n)])
    rng = np.random.default_rng(0)
    batch = np.concatenate([surface_batch(pts, n, rng) for _ in range(draws // n)])
    counts = np.bincount(batch[:, 0].astype(int), minlength=n)
    p = 1 / n
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) < 3 * sigma + 1)


def test_domain_batch_inside_and_centered():
    x = domain_batch(Domain(), 100_000, np.random.default_rng(1))
    assert Domain().contains(x).all()
    # uniform on [-1, 1]: std of the mean is sqrt(1/3 / n)
    assert np.all(np.abs(x.mean(axis=0)) < 3 * np.sqrt(1 / 3 / len(x)))
    assert np.array_equal(x, domain_batch(Domain(), 100_000, np.random.default_rng(1)))
    with pytest.raises(ValueError):
        domain_batch(Domain(), 0, np.random.default_rng(1))


def test_noise(rng):
    cloud = PointCloud(rng.uniform(-0.5, 0.5, size=(100_000, 3)))
    assert np.array_equal(add_gaussian_noise(cloud, 0.0, rng).points, cloud.points)
    noisy = add_gaussian_noise(cloud, 0.01, np.random.default_rng(4))
    assert np.std(noisy.points - cloud.points) == pytest.approx(0.01, rel=0.02)
    again = add_gaussian_noise(cloud, 0.01, np.random.default_rng(4))
    assert np.array_equal(noisy.points, again.points)
    with pytest.raises(ValueError):
        add_gaussian_noise(cloud, -1.0, rng)


def test_subsample_examples(rng):
    pts = rng.normal(size=(1000, 3))
    full = subsample(pts, 1.0, rng).points
    assert sorted(map(tuple, full)) == sorted(map(tuple, pts))
    half = subsample(pts, 0.5, rng).points
    assert len(half) == 500
    assert {tuple(p) for p in half} <= {tuple(p) for p in pts}
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            subsample(pts, bad, rng)


@given(st.integers(1, 300), st.floats(0.001, 1.0), st.integers(0, 2**32 - 1))
def test_subsample_no_duplicates(n, fraction, seed):
    pts = np.column_stack([np.arange(n, dtype=float), np.zeros(n), np.zeros(n)])
    out = subsample(pts, fraction, np.random.default_rng(seed)).points
    assert len(out) == int(np.ceil(fraction * n))
    assert len(np.unique(out[:, 0])) == len(out)


def test_streams_are_independent(rng):
    pts = rng.normal(size=(500, 3))
    a = BatchSampler(pts, SamplerConfig(100, 10, seed=7))
    b = BatchSampler(pts, SamplerConfig(100, 30, seed=7))
    for _ in range(3):
        assert np.array_equal(a.surface(), b.surface())
        a.domain_points(), b.domain_points()
    c = BatchSampler(pts, SamplerConfig(100, 10, seed=7))
    assert np.array_equal(BatchSampler(pts, SamplerConfig(100, 10, seed=7)).domain_points(), c.domain_points())
