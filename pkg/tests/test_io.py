import json

import numpy as np
import pytest

from nsp import io as nio
from nsp.geometry import PointCloud, TriangleMesh
from nsp.oracle import AnalyticField, AnalyticShape


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_xyz(tmp_path):
    cloud = nio.read_point_cloud(write(tmp_path, "a.xyz", "0 0 0\n1 2 3"))
    assert np.array_equal(cloud.points, [[0, 0, 0], [1, 2, 3]])
    # extra columns such as normals are ignored
    assert len(nio.read_point_cloud(write(tmp_path, "n.xyz", "0 0 0 0 0 1\n"))) == 1


@pytest.mark.parametrize("text, message", [("0 0 0\n1 2\n", ":2"), ("0 0 x\n", ":1"), ("", "no points"),
                                           ("0 0 nan\n", "non-finite")])
def test_xyz_errors(tmp_path, text, message):
    with pytest.raises(nio.FormatError, match=message):
        nio.read_point_cloud(write(tmp_path, "bad.xyz", text))


def test_obj_vertices_only(tmp_path):
    text = "# comment\nv 0 0 0\nv 1 0 0\nvn 0 0 1\nv 0 1 0\nf 1 2 3\n"
    cloud = nio.read_point_cloud(write(tmp_path, "m.obj", text))
    assert len(cloud) == 3
    mesh = nio.read_mesh(write(tmp_path, "m.obj", text))
    assert mesh.triangles.tolist() == [[0, 1, 2]]


def test_obj_polygons_and_negative_indices(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4/1 -3/2 -2/3 -1/4\n"
    mesh = nio.read_mesh(write(tmp_path, "q.obj", text))
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


@pytest.mark.parametrize("binary", [True, False])
def test_ply_cloud_round_trip(tmp_path, binary, rng):
    pts = rng.normal(size=(100, 3))
    path = str(tmp_path / "c.ply")
    nio.write_point_cloud(PointCloud(pts), path, binary=binary)
    back = nio.read_point_cloud(path).points
    if binary:
        assert np.array_equal(back, pts)
    else:
        assert np.allclose(back, pts, rtol=0, atol=1e-7)


def test_ply_with_extra_properties(tmp_path):
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
              "property float z\nproperty uchar red\nproperty float nx\nend_header\n")
    rec = np.zeros(2, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("nx", "<f4")])
    rec["x"] = [1.5, -2.0]
    rec["r"] = 255
    path = tmp_path / "e.ply"
    path.write_bytes(header.encode() + rec.tobytes())
    assert np.array_equal(nio.read_point_cloud(str(path)).points, [[1.5, 0, 0], [-2.0, 0, 0]])


def test_ply_rejects_big_endian(tmp_path):
    path = write(tmp_path, "b.ply", "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(nio.FormatError):
        nio.read_point_cloud(path)


def test_unknown_extension(tmp_path):
    with pytest.raises(nio.FormatError):
        nio.read_point_cloud(write(tmp_path, "a.stl", "solid"))


def test_unit_triangle_obj(tmp_path):
    path = str(tmp_path / "t.obj")
    nio.write_mesh(TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]), path)
    lines = open(path).read().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 3
    assert [line for line in lines if line.startswith("f ")] == ["f 1 2 3"]


@pytest.mark.parametrize("name, binary", [("m.obj", True), ("m.ply", True), ("m.ply", False)])
def test_mesh_round_trip(tmp_path, name, binary, rng):
    mesh = TriangleMesh(rng.normal(size=(30, 3)), rng.permutation(30)[:27].reshape(9, 3))
    path = str(tmp_path / name)
    nio.write_mesh(mesh, path, binary=binary)
    back = nio.read_mesh(path)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.vertices, mesh.vertices, rtol=0, atol=1e-7 if not binary else 0)


def test_empty_mesh_refused(tmp_path):
    with pytest.raises(ValueError):
        nio.write_mesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), str(tmp_path / "e.obj"))


def test_slice_of_sphere(tmp_path):
    path = str(tmp_path / "s.csv")
    R = 65
    assert nio.export_slice(AnalyticField(AnalyticShape.sphere(0.6)), 2, 0.0, R, path) == R * R
    rows = nio.read_slice(path)
    assert rows.shape == (R * R, 6)
    spacing = 2 / (R - 1)
    u, v, d = rows[:, 0], rows[:, 1], rows[:, 2]
    ring = np.abs(np.hypot(u, v) - 0.6) < spacing
    assert d[ring].min() < spacing
    # the off-plane component completes a unit vector
    assert np.allclose(np.linalg.norm(rows[:, 3:6], axis=1), 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        nio.export_slice(AnalyticField(AnalyticShape.sphere()), 2, 1.5, R, path)


def test_run_config_parse_and_errors():
    cfg = nio.RunConfig.parse("epochs = 10  # short\nlambda_ma = 0.5\nedge_crossing = false\ninput = 'a b.xyz'\n")
    assert cfg.epochs == 10 and cfg.lambda_ma == 0.5 and cfg.edge_crossing is False and cfg.input == "a b.xyz"
    assert nio.RunConfig.parse(cfg.dump()) == cfg
    with pytest.raises(ValueError, match=":2: unknown key"):
        nio.RunConfig.parse("epochs = 1\nbogus = 2\n")
    with pytest.raises(ValueError, match=":1: bad value"):
        nio.RunConfig.parse("epochs = many\n")
    with pytest.raises(ValueError):
        nio.RunConfig(profile="huge")


def test_run_config_builds_component_configs():
    cfg = nio.RunConfig(eta=0.0, resolution=32, domain_batch=100, seed=4)
    assert cfg.extraction_config().threshold == 2 / 32
    t = cfg.train_config()
    assert t.sampler.domain_batch == 100 and t.seed == 4 and t.weights.lambda_gm == 0.06
    assert cfg.update(epochs=None, seed=9).seed == 9


def test_manifest(tmp_path):
    path = tmp_path / "m.json"
    nio.write_manifest(path, "train", nio.RunConfig(seed=3), {"checkpoint": "c.npz"})
    data = json.loads(path.read_text())
    assert data["seed"] == 3 and data["config"]["epochs"] == 3000
    assert {"nsp", "numpy", "scipy", "python"} <= set(data["versions"])
