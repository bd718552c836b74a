"""Mesh extraction from a learned shortest-path field.

Three stages over a regular cell grid:

1. rough filtering: drop cells whose eight corner distances are all >= eta;
2. cell determination: pull random samples of each cell by the field
   (``y = x - F(x)``) and keep the cell if a pulled point lands in its
   slightly enlarged box; the in-box pulled point of least distance becomes
   the cell's representative point;
3. dual contouring: a quad joins the representative points of the four
   cells around every interior grid edge whose four cells all kept one.
   With ``edge_crossing`` on, the edge must also be crossed by the surface:
   the shortest-path vectors at its two ends have to point in opposite
   directions (the unsigned analogue of a sign change).  Without
   it a band of kept cells two cells thick yields folded, non-manifold quads.

Quads are split into triangles along their shorter diagonal and the result
is Laplacian-smoothed without changing connectivity.  A field is anything
with ``esp(points)`` and ``distance(points)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .geometry import Domain, GridSpec, TriangleMesh, cell_box


class NoSurfaceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    resolution: int = 256
    eta: float | None = None  # None: 2 / resolution
    samples_per_cell: int = 200
    enlargement: float = 0.07
    smooth_iterations: int = 3
    smooth_step: float = 0.5
    min_component_fraction: float = 0.0
    edge_crossing: bool = True
    include_corners: bool = True
    cell_chunk: int = 2048

    def __post_init__(self):
        if self.resolution < 2 or self.samples_per_cell < 1:
            raise ValueError("resolution must be >= 2 and samples_per_cell >= 1")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 <= self.enlargement < 1:
            raise ValueError("enlargement must lie in [0, 1)")
        if self.smooth_iterations < 0 or not 0 < self.smooth_step <= 1:
            raise ValueError("invalid smoothing parameters")

    @property
    def threshold(self):
        return 2.0 / self.resolution if self.eta is None else self.eta


@dataclass
class CellSet:
    """Cell indices ``(k, 3)`` with optional representative points (NaN when absent)."""

    grid: GridSpec
    indices: np.ndarray
    points: np.ndarray | None = None

    def __len__(self):
        return len(self.indices)

    @property
    def has_point(self):
        if self.points is None:
            return np.zeros(len(self.indices), dtype=bool)
        return ~np.isnan(self.points[:, 0])


def corner_distances(field, grid):
    """Distance values on the ``(N + 1)^3`` lattice, evaluated one slab at a time."""
    n1 = grid.resolution + 1
    ys, zs = grid.vertex_coords(1), grid.vertex_coords(2)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    plane = np.column_stack([np.zeros(yy.size), yy.ravel(), zz.ravel()])
    out = np.empty((n1, n1, n1))
    for i, x in enumerate(grid.vertex_coords(0)):
        plane[:, 0] = x
        out[i] = np.asarray(field.distance(plane)).reshape(n1, n1)
    return out


def rough_filter(field, grid, eta):
    """Cells with at least one corner distance below ``eta``."""
    near = corner_distances(field, grid) < eta
    keep = np.zeros((grid.resolution,) * 3, dtype=bool)
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                keep |= near[di:di + grid.resolution, dj:dj + grid.resolution, dk:dk + grid.resolution]
    return CellSet(grid, np.argwhere(keep))


_CORNERS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.float64)


def determine_cells(field, cells, config, rng):
    """Keep cells that attract one of their own pulled samples; assign representative points.

    With ``include_corners`` the eight cell corners join the random samples:
    a cell the surface only grazes at a corner is rarely hit by uniform
    samples but always by that corner.
    """
    grid = cells.grid
    h = grid.cell_size
    reps = np.full((len(cells), 3), np.nan)
    for start in range(0, len(cells), config.cell_chunk):
        idx = cells.indices[start:start + config.cell_chunk]
        k = len(idx)
        n = config.samples_per_cell
        lo = grid.domain.lo + idx * h
        x = lo[:, None, :] + rng.uniform(0.0, h, size=(k, n, 3))
        if config.include_corners:
            x = np.concatenate([x, lo[:, None, :] + h * _CORNERS[None]], axis=1)
        n = x.shape[1]
        y = x - np.asarray(field.esp(x.reshape(-1, 3))).reshape(k, n, 3)
        box_lo, box_hi = cell_box(idx, grid, config.enlargement)
        inside = np.all((y >= box_lo[:, None, :]) & (y <= box_hi[:, None, :]), axis=2)
        if not inside.any():
            continue
        d = np.full((k, n), np.inf)
        d[inside] = field.distance(y[inside])
        has = inside.any(axis=1)
        best = np.argmin(d, axis=1)
        chosen = y[np.arange(k), best]
        reps[start:start + k][has] = chosen[has]
    keep = ~np.isnan(reps[:, 0])
    return CellSet(grid, cells.indices[keep], reps[keep])


def triangulate_quad(points):
    """Split one quad ``(4, 3)`` into triangles of local corner indices.

    Splits along the shorter diagonal (ties: the 0-2 diagonal).  With two
    coincident corners the quad collapses to one triangle.
    """
    p = np.asarray(points, dtype=np.float64)
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)):
        if np.array_equal(p[a], p[b]):
            rest = [i for i in range(4) if i != b]
            return np.array([rest])
    if np.linalg.norm(p[1] - p[3]) < np.linalg.norm(p[0] - p[2]):
        return np.array([[0, 1, 3], [1, 2, 3]])
    return np.array([[0, 1, 2], [0, 2, 3]])


def triangulate_quads(vertices, quads):
    """Vectorized :func:`triangulate_quad` over ``(q, 4)`` vertex-index quads."""
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if len(quads) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    p = vertices[quads]
    coincide = np.zeros(len(quads), dtype=bool)
    drop = np.full(len(quads), -1)
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)):
        same = np.all(p[:, a] == p[:, b], axis=1) & ~coincide
        drop[same] = b
        coincide |= same
    short13 = np.linalg.norm(p[:, 1] - p[:, 3], axis=1) < np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    regular = quads[~coincide]
    s = short13[~coincide]
    tri_a = np.where(s[:, None], regular[:, [0, 1, 3]], regular[:, [0, 1, 2]])
    tri_b = np.where(s[:, None], regular[:, [1, 2, 3]], regular[:, [0, 2, 3]])
    tris = [np.stack([tri_a, tri_b], axis=1).reshape(-1, 3)]
    for b in range(4):
        sel = coincide & (drop == b)
        if sel.any():
            tris.append(quads[sel][:, [i for i in range(4) if i != b]])
    tris = np.concatenate(tris)
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    return tris[ok]


_TIE_DIRECTION = np.array([0.267261, 0.534522, 0.801784])  # generic unit vector


def _directions(field, points, scale):
    """Unit shortest-path directions; a vertex exactly on the surface is read just off it."""
    F = np.asarray(field.esp(points), dtype=np.float64)
    norm = np.linalg.norm(F, axis=1)
    zero = norm <= 1e-9 * scale
    if zero.any():
        F[zero] = np.asarray(field.esp(points[zero] + 1e-6 * scale * _TIE_DIRECTION))
        norm[zero] = np.linalg.norm(F[zero], axis=1)
    G = np.tile(_TIE_DIRECTION, (len(F), 1))
    ok = norm > 1e-9 * scale
    G[ok] = F[ok] / norm[ok, None]
    return G


def edge_crossed(field, grid, start, axis):
    """Whether the surface crosses the grid edges from lattice vertex ``start`` along ``axis``.

    On opposite sides of a surface the shortest-path vectors point in
    opposite directions, so an edge is crossed when ``G(a) . G(b) < 0``.
    A lattice vertex lying exactly on the surface is assigned the side of a
    point displaced from it by a tiny fixed offset, so exactly one of the
    edges meeting there counts.
    """
    start = np.asarray(start, dtype=np.int64).reshape(-1, 3)
    if len(start) == 0:
        return np.zeros(0, dtype=bool)
    end = start.copy()
    end[:, axis] += 1
    nodes, inverse = np.unique(np.concatenate([start, end]), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    G = _directions(field, grid.domain.lo + nodes * grid.cell_size, grid.cell_size)
    return np.sum(G[inverse[:len(start)]] * G[inverse[len(start):]], axis=1) < 0


def dual_contour(cells, field=None):
    """Quads around interior grid edges whose four cells carry representative points.

    Given ``field``, edges must also pass :func:`edge_crossed`.  Returns
    ``(quads, mesh)``: ``quads`` indexes the mesh vertices; vertices not
    used by any quad are dropped.
    """
    grid = cells.grid
    N = grid.resolution
    has = cells.has_point
    idx = cells.indices[has]
    pts = cells.points[has]
    vid = np.full((N, N, N), -1, dtype=np.int64)
    vid[idx[:, 0], idx[:, 1], idx[:, 2]] = np.arange(len(idx))

    quads = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        v = np.moveaxis(vid, axis, 0)
        ring = np.stack([v[:, :-1, :-1], v[:, 1:, :-1], v[:, 1:, 1:], v[:, :-1, 1:]], axis=-1)
        full = np.all(ring >= 0, axis=-1)
        ring = ring[full]
        if axis == 1:
            # keep every ring counter-clockwise about its own axis
            ring = ring[:, ::-1]
        if field is not None and len(ring):
            pos = np.argwhere(full)
            start = np.zeros((len(pos), 3), dtype=np.int64)
            start[:, axis] = pos[:, 0]
            start[:, others[0]] = pos[:, 1] + 1
            start[:, others[1]] = pos[:, 2] + 1
            ring = ring[edge_crossed(field, grid, start, axis)]
        quads.append(ring)
    quads = np.concatenate(quads)

    used = np.unique(quads)
    remap = np.full(len(idx), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    quads = remap[quads]
    vertices = pts[used]
    mesh = TriangleMesh(vertices, triangulate_quads(vertices, quads))
    return quads, mesh


def laplacian_smooth(mesh, iterations=3, step=0.5):
    """Move each vertex toward the mean of its edge neighbours; connectivity is kept."""
    if iterations < 0 or not 0 < step <= 1:
        raise ValueError("invalid smoothing parameters")
    v = mesh.vertices.copy()
    if iterations == 0 or mesh.is_empty:
        return TriangleMesh(v, mesh.triangles.copy(), dict(mesh.info))
    e = mesh.edges()
    n = len(v)
    adj = sparse.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                            shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    moving = deg > 0
    for _ in range(iterations):
        avg = adj @ v
        avg[moving] /= deg[moving, None]
        v[moving] += step * (avg[moving] - v[moving])
    return TriangleMesh(v, mesh.triangles.copy(), dict(mesh.info))


def mesh_components(mesh):
    """Component label per triangle (triangles sharing a vertex are connected)."""
    n = len(mesh.vertices)
    t = mesh.triangles
    rows = np.r_[t[:, 0], t[:, 1]]
    cols = np.r_[t[:, 1], t[:, 2]]
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    labels = connected_components(graph, directed=False)[1][t[:, 0]]
    # relabel so vertices outside every triangle do not count
    uniq, labels = np.unique(labels, return_inverse=True)
    return labels.ravel(), len(uniq)


def compact(mesh, keep_triangles):
    tris = mesh.triangles[keep_triangles]
    used = np.unique(tris)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[tris], dict(mesh.info))


def remove_small_components(mesh, fraction=0.01):
    """Drop connected components whose area is below ``fraction`` of the total."""
    if mesh.is_empty or fraction <= 0:
        return mesh
    labels, count = mesh_components(mesh)
    area = np.bincount(labels, weights=mesh.triangle_areas(), minlength=count)
    keep = area >= fraction * area.sum()
    return compact(mesh, keep[labels])


def extract(field, config=ExtractionConfig(), rng=None, domain=Domain()):
    """Full pipeline; the mesh's ``info`` carries per-stage counts."""
    rng = np.random.default_rng(0) if rng is None else rng
    grid = GridSpec(config.resolution, domain)
    rough = rough_filter(field, grid, config.threshold)
    determined = determine_cells(field, rough, config, rng)
    quads, mesh = dual_contour(determined, field if config.edge_crossing else None)
    stats = {"rough_cells": len(rough), "surface_cells": len(determined),
             "quads": len(quads), "triangles": len(mesh.triangles)}
    if mesh.is_empty:
        raise NoSurfaceError(f"no surface found (stage counts: {stats})")
    mesh = laplacian_smooth(mesh, config.smooth_iterations, config.smooth_step)
    if config.min_component_fraction > 0:
        mesh = remove_small_components(mesh, config.min_component_fraction)
    stats["components"] = mesh_components(mesh)[1] if not mesh.is_empty else 0
    stats["vertices"] = len(mesh.vertices)
    mesh.info.update(stats)
    return mesh
