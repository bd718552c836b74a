"""Ground-truth distance fields for validation.

Closed-form unsigned distances and shortest-path vectors for a plane, a
sphere, the upper hemisphere and a cylinder with a quarter cut away, plus
exact nearest-point search over arbitrary clouds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .field import TapedEval
from .geometry import PointCloud, as_points

EQUIDISTANCE_TOL = 1e-9


@dataclass(frozen=True)
class AnalyticShape:
    """``tag`` is one of plane, sphere, hemisphere, partial_cylinder.

    plane: ``z = offset``; sphere/hemisphere: centered at the origin with
    ``radius`` (hemisphere keeps ``z >= 0``); partial_cylinder: axis along
    z, ``radius``, angles ``[0, arc]`` and ``|z| <= half_height``.
    """

    tag: str
    radius: float = 0.6
    offset: float = 0.0
    arc: float = 1.5 * np.pi
    half_height: float = 0.5

    def __post_init__(self):
        if self.tag not in ("plane", "sphere", "hemisphere", "partial_cylinder"):
            raise ValueError(f"unknown shape {self.tag!r}")
        if self.radius <= 0 or self.half_height <= 0 or not 0 < self.arc < 2 * np.pi:
            raise ValueError("shape parameters out of range")

    @classmethod
    def plane(cls, offset=0.0):
        return cls("plane", offset=offset)

    @classmethod
    def sphere(cls, radius=0.6):
        return cls("sphere", radius=radius)

    @classmethod
    def hemisphere(cls, radius=0.6):
        return cls("hemisphere", radius=radius)

    @classmethod
    def partial_cylinder(cls, radius=0.5, arc=1.5 * np.pi, half_height=0.5):
        return cls("partial_cylinder", radius=radius, arc=arc, half_height=half_height)


PRESETS = {
    "hemisphere": AnalyticShape.hemisphere(),
    "partial_cylinder": AnalyticShape.partial_cylinder(),
    "sphere": AnalyticShape.sphere(),
    "plane": AnalyticShape.plane(),
}


def nearest_point(shape, x):
    """Nearest surface points and an equidistance flag for points ``x``.

    The flag marks points with more than one nearest surface point (the
    measure-zero set where the distance is not differentiable).
    """
    x = as_points(x)
    if shape.tag == "plane":
        p = x.copy()
        p[:, 2] = shape.offset
        return p, np.zeros(len(x), dtype=bool)
    if shape.tag in ("sphere", "hemisphere"):
        return _nearest_sphere(shape, x)
    return _nearest_partial_cylinder(shape, x)


def _radial(x, r, tol):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    flag = n[:, 0] <= tol
    safe = np.where(n > tol, n, 1.0)
    p = np.where(n > tol, r * x / safe, np.array([0.0, 0.0, r]))
    return p, flag


def _nearest_sphere(shape, x):
    r = shape.radius
    p, flag = _radial(x, r, EQUIDISTANCE_TOL)
    if shape.tag == "sphere":
        return p, flag
    # below the equator the radial projection leaves the cap: nearest is on the rim
    below = x[:, 2] < 0
    rho = np.linalg.norm(x[:, :2], axis=1)
    rim_ok = rho > EQUIDISTANCE_TOL
    rim = np.zeros_like(x)
    rim[:, :2] = np.where(rim_ok[:, None], r * x[:, :2] / np.where(rim_ok, rho, 1.0)[:, None], np.array([r, 0.0]))
    p = np.where(below[:, None], rim, p)
    flag = np.where(below, ~rim_ok, flag)
    return p, flag


def _nearest_partial_cylinder(shape, x):
    # squared distance separates into an angular part and an axial part
    r, arc, hh = shape.radius, shape.arc, shape.half_height
    rho = np.linalg.norm(x[:, :2], axis=1)
    phi = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)
    inside = phi <= arc
    gap_to_end = phi - arc
    gap_to_start = 2 * np.pi - phi
    theta = np.where(inside, phi, np.where(gap_to_end <= gap_to_start, arc, 0.0))
    tie = ~inside & (np.abs(gap_to_end - gap_to_start) <= EQUIDISTANCE_TOL)
    flag = (rho <= EQUIDISTANCE_TOL) | (tie & (rho > EQUIDISTANCE_TOL))
    z = np.clip(x[:, 2], -hh, hh)
    p = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return p, flag


def exact_esp(shape, x):
    """Shortest-path vectors ``x - nearest(x)`` and the equidistance flag."""
    x = as_points(x)
    p, flag = nearest_point(shape, x)
    return x - p, flag


def exact_distance(shape, x):
    x = as_points(x)
    if shape.tag == "plane":
        return np.abs(x[:, 2] - shape.offset)
    if shape.tag == "sphere":
        return np.abs(np.linalg.norm(x, axis=1) - shape.radius)
    F, _ = exact_esp(shape, x)
    return np.linalg.norm(F, axis=1)


def on_surface_residual(shape, points):
    """How far points are from satisfying the shape's defining equations."""
    p = as_points(points)
    if shape.tag == "plane":
        return np.abs(p[:, 2] - shape.offset)
    if shape.tag in ("sphere", "hemisphere"):
        res = np.abs(np.linalg.norm(p, axis=1) - shape.radius)
        if shape.tag == "hemisphere":
            res = np.maximum(res, np.maximum(-p[:, 2], 0.0))
        return res
    rho = np.linalg.norm(p[:, :2], axis=1)
    phi = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)
    # angles just below 2*pi are the start of the arc seen from the other side
    ang = np.where(phi > shape.arc, np.minimum(phi - shape.arc, 2 * np.pi - phi) * shape.radius, 0.0)
    ang = np.where(2 * np.pi - phi < 1e-12, 0.0, ang)
    return np.maximum.reduce([np.abs(rho - shape.radius), ang, np.maximum(np.abs(p[:, 2]) - shape.half_height, 0.0)])


def sample_shape(shape, count, rng):
    """``count`` points uniformly distributed by area on the shape."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if shape.tag == "plane":
        xy = rng.uniform(-1.0, 1.0, size=(count, 2))
        pts = np.column_stack([xy, np.full(count, shape.offset)])
    elif shape.tag == "sphere":
        v = rng.normal(size=(count, 3))
        pts = shape.radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    elif shape.tag == "hemisphere":
        # the height of an area-uniform point on a sphere cap is uniform
        r = shape.radius
        z = rng.uniform(0.0, r, size=count)
        phi = rng.uniform(0.0, 2 * np.pi, size=count)
        rho = np.sqrt(np.maximum(r * r - z * z, 0.0))
        pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    else:
        theta = rng.uniform(0.0, shape.arc, size=count)
        z = rng.uniform(-shape.half_height, shape.half_height, size=count)
        pts = np.column_stack([shape.radius * np.cos(theta), shape.radius * np.sin(theta), z])
    return PointCloud(pts, source=f"analytic:{shape.tag}")


def brute_force_distance(cloud, x, exhaustive=False):
    """Distance from points ``x`` to the nearest cloud point, and that point.

    Uses a k-d tree unless ``exhaustive`` is set; both give the same minimum.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud, "cloud")
    if len(pts) == 0:
        raise ValueError("cloud is empty")
    q = np.asarray(x, dtype=np.float64)
    single = q.ndim == 1
    q = as_points(q, "query")
    if exhaustive:
        d = np.empty(len(q))
        idx = np.empty(len(q), dtype=np.int64)
        for start in range(0, len(q), 256):
            block = q[start:start + 256]
            d2 = np.sum((block[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
            idx[start:start + 256] = np.argmin(d2, axis=1)
            d[start:start + 256] = np.sqrt(d2[np.arange(len(block)), idx[start:start + 256]])
    else:
        d, idx = cKDTree(pts).query(q)
    if single:
        return float(d[0]), pts[idx[0]]
    return d, pts[idx]


def gap_midline_distance(shape, points, reach=0.1):
    """Distance from points to the half-plane strip bisecting the cylinder's missing sector.

    The strip lies at the middle angle of the gap, spans radii
    ``[0, radius + reach]`` and the cylinder's height.  A reconstruction that
    closes the gap must cross it.
    """
    if shape.tag != "partial_cylinder":
        raise ValueError("gap midline is defined for the partial cylinder only")
    p = as_points(points)
    mid = 0.5 * (shape.arc + 2 * np.pi)
    u = np.array([np.cos(mid), np.sin(mid)])
    s = np.clip(p[:, :2] @ u, 0.0, shape.radius + reach)
    planar = p[:, :2] - s[:, None] * u
    dz = np.maximum(np.abs(p[:, 2]) - shape.half_height, 0.0)
    return np.sqrt(np.sum(planar ** 2, axis=1) + dz ** 2)


class AnalyticField:
    """Exact distance/ESP of an analytic shape, usable wherever a field is expected.

    On a tape its outputs are constants: it has no parameters.
    """

    def __init__(self, shape):
        self.shape = shape
        self.config = None

    def esp(self, x):
        return exact_esp(self.shape, np.asarray(x, dtype=np.float64).reshape(-1, 3))[0]

    def distance(self, x):
        return exact_distance(self.shape, np.asarray(x, dtype=np.float64).reshape(-1, 3))

    def bind(self, tape):
        return BoundAnalyticField(self, tape)


class BoundAnalyticField:
    def __init__(self, field, tape):
        self.field = field
        self.tape = tape
        self.params = []

    def evaluate(self, x, derivatives=False, detach=False):
        pts = ad.value_of(x)
        F = self.field.esp(pts)
        d = np.linalg.norm(F, axis=1)
        G = ad.normalize(F)
        c = self.tape.constant
        # the gradient of an exact distance is its unit shortest-path direction
        return TapedEval(F=c(F), d=c(d), G=c(G), grad_d=c(G) if derivatives else None)


class ConstantField:
    """``F(x) = v`` everywhere; a stub for loss tests."""

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=np.float64)
        self.config = None

    def esp(self, x):
        n = len(np.asarray(x).reshape(-1, 3))
        return np.broadcast_to(self.vector, (n, 3)).copy()

    def distance(self, x):
        return np.linalg.norm(self.esp(x), axis=1)

    def bind(self, tape):
        return _BoundConstantField(self, tape)


class _BoundConstantField:
    def __init__(self, field, tape):
        self.field = field
        self.tape = tape
        self.params = []

    def evaluate(self, x, derivatives=False, detach=False):
        F = self.field.esp(ad.value_of(x))
        c = self.tape.constant
        return TapedEval(F=c(F), d=c(np.linalg.norm(F, axis=1)), G=c(ad.normalize(F)),
                         grad_d=c(np.zeros_like(F)) if derivatives else None)
