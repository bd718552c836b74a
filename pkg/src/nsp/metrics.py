"""Chamfer and Hausdorff distances between point sets, meshes and analytic shapes.

Chamfer is the unsquared symmetric mean::

    d_C(A, B) = (mean_a min_b |a - b| + mean_b min_a |a - b|) / 2

and Hausdorff the larger of the two one-sided maxima.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, TriangleMesh, as_points

DEFAULT_SAMPLES = 100_000


def _pts(x, name):
    if isinstance(x, PointCloud):
        x = x.points
    pts = as_points(x, name)
    if len(pts) == 0:
        raise ValueError(f"{name} is empty")
    return pts


def sample_mesh_surface(mesh, count, rng):
    """``count`` points drawn uniformly by area over the mesh's triangles."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if mesh.is_empty:
        raise ValueError("mesh has no triangles")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    tri = rng.choice(len(areas), size=count, p=areas / total)
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    return PointCloud(a + u[:, None] * (b - a) + v[:, None] * (c - a), source="mesh-sample")


def one_sided(A, B):
    """Per-point distance from each point of ``A`` to its nearest point of ``B``."""
    return cKDTree(_pts(B, "B")).query(_pts(A, "A"))[0]


def chamfer(A, B):
    return 0.5 * (float(np.mean(one_sided(A, B))) + float(np.mean(one_sided(B, A))))


def hausdorff(A, B):
    return max(float(np.max(one_sided(A, B))), float(np.max(one_sided(B, A))))


@dataclass
class MetricReport:
    chamfer: float
    hausdorff: float
    chamfer_ab: float
    chamfer_ba: float
    hausdorff_ab: float
    hausdorff_ba: float
    n_a: int
    n_b: int

    @classmethod
    def between(cls, A, B):
        ab, ba = one_sided(A, B), one_sided(B, A)
        return cls(chamfer=0.5 * (float(ab.mean()) + float(ba.mean())),
                   hausdorff=max(float(ab.max()), float(ba.max())),
                   chamfer_ab=float(ab.mean()), chamfer_ba=float(ba.mean()),
                   hausdorff_ab=float(ab.max()), hausdorff_ba=float(ba.max()),
                   n_a=len(ab), n_b=len(ba))

    def as_row(self, **extra):
        row = dict(extra)
        row.update(asdict(self))
        return row


def as_samples(x, count, rng):
    """Meshes are sampled, clouds pass through."""
    if isinstance(x, TriangleMesh):
        return sample_mesh_surface(x, count, rng)
    return x


def evaluate(reconstruction, reference, count=DEFAULT_SAMPLES, rng=None):
    """Report comparing two meshes/clouds; meshes are sampled with ``count`` points."""
    rng = np.random.default_rng(0) if rng is None else rng
    return MetricReport.between(as_samples(reconstruction, count, rng), as_samples(reference, count, rng))


def append_csv(path, row):
    """Append a dict as one CSV row, writing the header when the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            writer.writeheader()
        writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})


def report_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
