"""Seeded batch sampling and point-cloud corruption."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Domain, PointCloud


@dataclass(frozen=True)
class SamplerConfig:
    surface_batch: int = 20000
    domain_batch: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.surface_batch < 1 or self.domain_batch < 1:
            raise ValueError("batch sizes must be >= 1")


def _points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def surface_batch(cloud, n, rng):
    """``n`` cloud points drawn with replacement; the whole cloud if it has fewer than ``n``."""
    pts = _points(cloud)
    if len(pts) == 0:
        raise ValueError("cloud is empty")
    if len(pts) < n:
        return pts.copy()
    return pts[rng.integers(0, len(pts), size=n)]


def domain_batch(domain, n, rng):
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.uniform(domain.lo, domain.hi, size=(n, 3))


def add_gaussian_noise(cloud, sigma, rng):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    pts = _points(cloud)
    noisy = pts + rng.normal(0.0, sigma, size=pts.shape) if sigma > 0 else pts.copy()
    source = getattr(cloud, "source", None)
    return PointCloud(noisy, source=source)


def subsample(cloud, fraction, rng):
    """``ceil(fraction * n)`` distinct points, drawn without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    pts = _points(cloud)
    k = math.ceil(fraction * len(pts))
    idx = rng.choice(len(pts), size=k, replace=False)
    return PointCloud(pts[idx], source=getattr(cloud, "source", None))


class BatchSampler:
    """Independent surface / domain / corruption streams split from one seed.

    Changing one batch size leaves the other streams untouched.
    """

    def __init__(self, cloud, config=SamplerConfig(), domain=Domain()):
        self.cloud = cloud
        self.config = config
        self.domain = domain
        surface, dom, corrupt = np.random.SeedSequence(config.seed).spawn(3)
        self.surface_rng = np.random.default_rng(surface)
        self.domain_rng = np.random.default_rng(dom)
        self.corruption_rng = np.random.default_rng(corrupt)

    def surface(self):
        return surface_batch(self.cloud, self.config.surface_batch, self.surface_rng)

    def domain_points(self):
        return domain_batch(self.domain, self.config.domain_batch, self.domain_rng)
