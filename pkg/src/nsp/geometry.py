"""Point clouds, the cubic computational domain and its regular cell grid.

Points are plain ``(n, 3)`` float64 arrays throughout the package; the small
dataclasses here only carry what an array cannot (domain bounds, grid
resolution, mesh connectivity, provenance of a normalized cloud).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_points(points, name="points"):
    """Return ``points`` as a finite ``(n, 3)`` float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf coordinates")
    return arr


@dataclass
class PointCloud:
    points: np.ndarray
    source: str | None = None
    scale: float = 1.0
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.points = as_points(self.points)
        if len(self.points) == 0:
            raise ValueError("point cloud is empty")
        self.offset = np.asarray(self.offset, dtype=np.float64)

    def __len__(self):
        return len(self.points)

    def to_original(self, points):
        """Map normalized coordinates back to the coordinates the cloud was read in."""
        return (np.asarray(points, dtype=np.float64) - self.offset) / self.scale


@dataclass(frozen=True)
class Domain:
    min_corner: tuple = (-1.0, -1.0, -1.0)
    max_corner: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("domain corners must be 3-vectors")
        if not np.all(lo < hi):
            raise ValueError("min_corner must be < max_corner componentwise")
        if not np.allclose(hi - lo, hi[0] - lo[0]):
            raise ValueError("only cubic domains are supported")
        object.__setattr__(self, "min_corner", tuple(float(v) for v in lo))
        object.__setattr__(self, "max_corner", tuple(float(v) for v in hi))

    @property
    def lo(self):
        return np.array(self.min_corner)

    @property
    def hi(self):
        return np.array(self.max_corner)

    @property
    def extent(self):
        return self.max_corner[0] - self.min_corner[0]

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, points, tol=0.0):
        pts = np.asarray(points, dtype=np.float64)
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=-1)


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    domain: Domain = Domain()

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise ValueError(f"grid resolution must be an integer >= 2, got {self.resolution}")
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def cell_size(self):
        return self.domain.extent / self.resolution

    def vertex_coords(self, axis_index):
        """Coordinates of the ``N + 1`` grid planes along one axis."""
        lo = self.domain.min_corner[axis_index]
        return lo + self.cell_size * np.arange(self.resolution + 1)

    def vertices(self):
        """All ``(N + 1)^3`` lattice vertices, C-ordered over (i, j, k)."""
        axes = [self.vertex_coords(a) for a in range(3)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle with a repeated vertex index")

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    def triangle_areas(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edges(self):
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def boundary_edge_count(self):
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int(np.sum(counts == 1))

    def transformed(self, scale, offset):
        """Mesh with vertices mapped by ``(v - offset) / scale``."""
        return TriangleMesh((self.vertices - offset) / scale, self.triangles.copy(), dict(self.info))


def normalize_cloud(cloud, domain=Domain(), margin=0.1):
    """Isotropically scale and translate ``cloud`` into ``domain`` shrunk by ``margin``.

    ``margin`` is a fraction of the half-extent: 0.1 on ``[-1, 1]^3`` gives
    ``[-0.9, 0.9]^3``.

    The longest bounding-box axis of the cloud spans exactly the shrunk box.
    Returns ``(normalized, scale, offset)`` with ``normalized = scale * p + offset``.
    """
    if not 0.0 <= margin < 0.5:
        raise ValueError("margin must lie in [0, 0.5)")
    if isinstance(cloud, PointCloud):
        pts, source = cloud.points, cloud.source
    else:
        pts, source = as_points(cloud), None
    if len(pts) == 0:
        raise ValueError("cannot normalize an empty point cloud")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(np.max(hi - lo))
    if span == 0.0:
        raise ValueError("cannot normalize a cloud of identical points")
    target = domain.extent * (1.0 - margin)
    scale = target / span
    offset = domain.center - scale * 0.5 * (lo + hi)
    out = scale * pts + offset
    # clip round-off so the post-condition holds exactly
    inner_lo = domain.lo + 0.5 * margin * domain.extent
    inner_hi = domain.hi - 0.5 * margin * domain.extent
    out = np.clip(out, inner_lo, inner_hi)
    return PointCloud(out, source=source, scale=scale, offset=offset), scale, offset


def cell_of(points, grid):
    """Cell indices of points; lower-inclusive, with the last cell closed on top."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    dom = grid.domain
    if not np.all(dom.contains(pts)):
        raise ValueError("point outside the grid domain")
    h = grid.cell_size
    idx = np.clip(np.floor((pts - dom.lo) / h).astype(np.int64), 0, grid.resolution - 1)
    # floor of a rounded quotient can land one cell off near a face;
    # re-check against the same bounds cell_box reports
    idx = np.where((pts < dom.lo + idx * h) & (idx > 0), idx - 1, idx)
    idx = np.where((pts >= dom.lo + (idx + 1) * h) & (idx < grid.resolution - 1), idx + 1, idx)
    return idx[0] if single else idx


def cell_box(idx, grid, enlargement=0.0):
    """Axis-aligned box ``(lo, hi)`` of cells, scaled about their centers by ``1 + enlargement``."""
    if enlargement < 0:
        raise ValueError("enlargement must be non-negative")
    idx = np.asarray(idx, dtype=np.int64)
    h = grid.cell_size
    pad = 0.5 * h * enlargement
    return grid.domain.lo + idx * h - pad, grid.domain.lo + (idx + 1) * h + pad
