import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nsp.geometry import Domain, GridSpec, PointCloud, TriangleMesh, cell_box, cell_of, normalize_cloud


def test_domain_default_and_validation():
    d = Domain()
    assert np.array_equal(d.lo, [-1, -1, -1]) and np.array_equal(d.hi, [1, 1, 1])
    with pytest.raises(ValueError):
        Domain((0, 0, 0), (0, 1, 1))


def test_point_cloud_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_grid_validation_and_cell_size():
    with pytest.raises(ValueError):
        GridSpec(1)
    g = GridSpec(256)
    assert g.cell_size * 256 == pytest.approx(2.0, abs=1e-15)
    assert GridSpec(3).vertices().shape == (64, 3)


def test_mesh_invariants():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 1]])
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert m.triangle_areas()[0] == 0.5
    assert m.boundary_edge_count() == 3


def test_normalize_two_points():
    out, scale, offset = normalize_cloud([[0, 0, 0], [10, 0, 0]])
    assert np.allclose(out.points[:, 0], [-0.9, 0.9])
    assert scale == pytest.approx(0.18)


def test_normalize_fixed_point():
    pts = np.array([[-0.9, -0.9, -0.9], [0.9, 0.9, 0.9], [0.1, -0.3, 0.2]])
    out, scale, offset = normalize_cloud(pts)
    assert scale == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(offset, 0.0, atol=1e-15)
    assert np.allclose(out.points, pts, atol=1e-15)


def test_normalize_errors():
    with pytest.raises(ValueError):
        normalize_cloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        normalize_cloud(np.ones((4, 3)))
    with pytest.raises(ValueError):
        normalize_cloud(np.eye(3), margin=0.5)


@given(arrays(np.float64, (20, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_postcondition_and_inverse(pts):
    if np.ptp(pts, axis=0).max() < 1e-6:
        return
    out, scale, offset = normalize_cloud(pts)
    assert np.all(np.abs(out.points) <= 0.9)
    span = np.ptp(out.points, axis=0).max()
    assert span == pytest.approx(1.8, rel=1e-12)
    back = out.to_original(out.points)
    assert np.allclose(back, pts, rtol=1e-9, atol=1e-9 * np.abs(pts).max())


def test_normalize_random_cloud(rng):
    pts = rng.normal(size=(1000, 3)) * [3, 1, 0.5] + 7
    out, _, _ = normalize_cloud(pts)
    assert np.all(np.abs(out.points) <= 0.9)
    assert np.ptp(out.points[:, 0]) == pytest.approx(1.8, rel=1e-12)


def test_cell_of_examples():
    assert tuple(cell_of([-1, -1, -1], GridSpec(256))) == (0, 0, 0)
    assert tuple(cell_of([0, 0, 0], GridSpec(2))) == (1, 1, 1)
    assert tuple(cell_of([1, 1, 1], GridSpec(4))) == (3, 3, 3)
    with pytest.raises(ValueError):
        cell_of([1.5, 0, 0], GridSpec(4))


def test_cell_of_contains_point(rng):
    g = GridSpec(37)
    pts = rng.uniform(-1, 1, size=(100_000, 3))
    idx = cell_of(pts, g)
    lo, hi = cell_box(idx, g)
    assert np.all((idx >= 0) & (idx < 37))
    assert np.all((pts >= lo) & (pts <= hi))


def test_cell_of_on_lattice_planes():
    g = GridSpec(10)
    coords = g.vertex_coords(0)
    pts = np.stack([coords] * 3, axis=1)
    idx = cell_of(pts, g)
    lo, hi = cell_box(idx, g)
    assert np.all((pts >= lo) & (pts <= hi))
    # lower-inclusive: every interior lattice plane belongs to the cell above it
    assert np.array_equal(idx[:-1, 0], np.arange(10))


def test_cell_box_enlargement():
    g = GridSpec(256)
    lo, hi = cell_box([5, 6, 7], g, 0.07)
    assert np.allclose(hi - lo, 0.008359375, rtol=0, atol=1e-15)
    lo0, hi0 = cell_box([5, 6, 7], g)
    assert np.allclose(hi0 - lo0, 0.0078125)
    assert np.all(lo <= lo0) and np.all(hi >= hi0)
    assert np.allclose(0.5 * (lo + hi), 0.5 * (lo0 + hi0))
    with pytest.raises(ValueError):
        cell_box([0, 0, 0], g, -0.1)


def test_cells_tile_domain():
    g = GridSpec(4)
    idx = np.argwhere(np.ones((4, 4, 4)))
    lo, hi = cell_box(idx, g)
    assert np.prod(hi - lo, axis=1).sum() == pytest.approx(8.0)
    assert np.allclose(lo.min(0), -1) and np.allclose(hi.max(0), 1)
