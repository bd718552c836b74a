"""Point-cloud and mesh files, run configuration, manifests and slice export.

Supported formats: XYZ (whitespace separated ascii), OBJ (vertices and
triangular faces) and PLY (ascii or binary little-endian; positions only,
other vertex properties are skipped).
"""
from __future__ import annotations

import dataclasses
import json
import os
import platform
import sys

import numpy as np

from .extraction import ExtractionConfig
from .geometry import PointCloud, TriangleMesh
from .losses import LossWeights
from .trainer import TrainConfig
from .sampler import SamplerConfig

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


FLOAT = "%.17g %.17g %.17g"  # round-trips doubles exactly


class FormatError(ValueError):
    pass


def _fmt(path):
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext not in ("xyz", "txt", "obj", "ply"):
        raise FormatError(f"{path}: unsupported extension {ext!r} (use .xyz, .obj or .ply)")
    return "xyz" if ext == "txt" else ext


def _finite(points, path):
    if len(points) == 0:
        raise FormatError(f"{path}: no points")
    bad = np.flatnonzero(~np.all(np.isfinite(points), axis=1))
    if len(bad):
        raise FormatError(f"{path}: non-finite coordinates at point {bad[0]}")
    return points


# ---------------------------------------------------------------- reading

def _read_xyz(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            if len(s) < 3:
                raise FormatError(f"{path}:{lineno}: expected at least 3 numbers")
            try:
                rows.append([float(t) for t in s[:3]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed number in {line.strip()!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            try:
                if s[0] == "v":
                    if len(s) < 4:
                        raise ValueError
                    verts.append([float(t) for t in s[1:4]])
                elif s[0] == "f":
                    idx = [int(t.split("/")[0]) for t in s[1:]]
                    if len(idx) < 3:
                        raise ValueError
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    # fan-triangulate polygons
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed {s[0]!r} line") from None
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise FormatError(f"{path}:1: missing 'ply' magic")
    fmt, elements, lineno = None, [], 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError(f"{path}: header has no end_header")
        s = raw.decode("ascii", "replace").split()
        if not s or s[0] in ("comment", "obj_info"):
            continue
        if s[0] == "end_header":
            break
        if s[0] == "format":
            fmt = s[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}:{lineno}: unsupported PLY format {fmt}")
        elif s[0] == "element":
            elements.append({"name": s[1], "count": int(s[2]), "props": []})
        elif s[0] == "property":
            if not elements:
                raise FormatError(f"{path}:{lineno}: property before element")
            if s[1] == "list":
                if s[2] not in PLY_TYPES or s[3] not in PLY_TYPES:
                    raise FormatError(f"{path}:{lineno}: unknown PLY type")
                elements[-1]["props"].append((s[4], ("list", PLY_TYPES[s[2]], PLY_TYPES[s[3]])))
            else:
                if s[1] not in PLY_TYPES:
                    raise FormatError(f"{path}:{lineno}: unknown PLY type {s[1]!r}")
                elements[-1]["props"].append((s[2], PLY_TYPES[s[1]]))
        else:
            raise FormatError(f"{path}:{lineno}: unexpected header line {raw.strip()!r}")
    if fmt is None:
        raise FormatError(f"{path}: header has no format line")
    return fmt, elements, lineno


def _read_ply(path):
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    with open(path, "rb") as fh:
        fmt, elements, lineno = _ply_header(fh, path)
        if fmt == "ascii":
            lines = fh.read().decode("ascii").splitlines()
            pos = 0
            for el in elements:
                rows = []
                for _ in range(el["count"]):
                    while pos < len(lines) and not lines[pos].strip():
                        pos += 1
                    if pos >= len(lines):
                        raise FormatError(f"{path}: unexpected end of file in element {el['name']}")
                    tokens = lines[pos].split()
                    where = f"{path}:{lineno + pos + 1}"
                    pos += 1
                    rows.append(_ascii_record(el, tokens, where))
                verts, faces = _collect(el, rows, verts, faces)
        else:
            for el in elements:
                if any(isinstance(t, tuple) for _, t in el["props"]):
                    rows = [_binary_record(el, fh, path) for _ in range(el["count"])]
                else:
                    # fixed-size records read in one go
                    dtype = np.dtype([(n, "<" + t) for n, t in el["props"]])
                    rows = np.frombuffer(fh.read(dtype.itemsize * el["count"]), dtype=dtype)
                    if len(rows) != el["count"]:
                        raise FormatError(f"{path}: truncated element {el['name']}")
                verts, faces = _collect(el, rows, verts, faces)
    return verts, faces


def _ascii_record(el, tokens, where):
    rec, k = {}, 0
    try:
        for name, t in el["props"]:
            if isinstance(t, tuple):
                n = int(tokens[k])
                rec[name] = [int(v) for v in tokens[k + 1:k + 1 + n]]
                if len(rec[name]) != n:
                    raise IndexError
                k += 1 + n
            else:
                rec[name] = float(tokens[k])
                k += 1
    except (IndexError, ValueError):
        raise FormatError(f"{where}: malformed {el['name']} record") from None
    return rec


def _binary_record(el, fh, path):
    rec = {}
    for name, t in el["props"]:
        if isinstance(t, tuple):
            cnt = np.frombuffer(fh.read(np.dtype(t[1]).itemsize), dtype="<" + t[1])
            if len(cnt) != 1:
                raise FormatError(f"{path}: truncated element {el['name']}")
            size = np.dtype(t[2]).itemsize * int(cnt[0])
            rec[name] = np.frombuffer(fh.read(size), dtype="<" + t[2]).astype(np.int64).tolist()
        else:
            v = np.frombuffer(fh.read(np.dtype(t).itemsize), dtype="<" + t)
            if len(v) != 1:
                raise FormatError(f"{path}: truncated element {el['name']}")
            rec[name] = v[0]
    return rec


def _collect(el, rows, verts, faces):
    if el["name"] == "vertex":
        if isinstance(rows, np.ndarray):
            verts = np.column_stack([rows[c].astype(np.float64) for c in "xyz"])
        else:
            verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64).reshape(-1, 3)
    elif el["name"] == "face":
        key = next((n for n, t in el["props"] if isinstance(t, tuple)), None)
        tris = []
        for r in rows:
            idx = list(r[key])
            tris.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return verts, faces


def read_point_cloud(path):
    """Positions from an .xyz, .obj or .ply file; faces and extra properties are ignored."""
    fmt = _fmt(path)
    if fmt == "xyz":
        pts = _read_xyz(path)
    elif fmt == "obj":
        pts = _read_obj(path)[0]
    else:
        pts = _read_ply(path)[0]
    return PointCloud(_finite(pts, path), source=os.path.abspath(path))


def read_mesh(path):
    fmt = _fmt(path)
    if fmt == "xyz":
        raise FormatError(f"{path}: xyz files hold no faces")
    verts, faces = _read_obj(path) if fmt == "obj" else _read_ply(path)
    _finite(verts, path)
    return TriangleMesh(verts, faces, {"source": os.path.abspath(path)})


# ---------------------------------------------------------------- writing

def _binary_ply(path, verts, faces=None):
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(verts)}",
              "property double x", "property double y", "property double z"]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(verts, dtype="<f8").tobytes())
        if faces is not None:
            rec = np.zeros(len(faces), dtype=[("n", "u1"), ("i", "<i4", (3,))])
            rec["n"] = 3
            rec["i"] = faces
            fh.write(rec.tobytes())


def _ascii_ply(path, verts, faces=None):
    with open(path, "w") as fh:
        fh.write(f"ply\nformat ascii 1.0\nelement vertex {len(verts)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if faces is not None:
            fh.write(f"element face {len(faces)}\nproperty list uchar int vertex_indices\n")
        fh.write("end_header\n")
        np.savetxt(fh, verts, fmt=FLOAT)
        if faces is not None:
            np.savetxt(fh, np.column_stack([np.full(len(faces), 3), faces]), fmt="%d")


def write_point_cloud(cloud, path, binary=True):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    fmt = _fmt(path)
    if fmt == "ply":
        (_binary_ply if binary else _ascii_ply)(path, pts)
    else:
        with open(path, "w") as fh:
            np.savetxt(fh, pts, fmt=("v " if fmt == "obj" else "") + FLOAT)


def write_mesh(mesh, path, binary=True):
    """OBJ (1-based indices) or PLY (0-based)."""
    if mesh.is_empty:
        raise ValueError("refusing to write an empty mesh")
    fmt = _fmt(path)
    if fmt == "ply":
        (_binary_ply if binary else _ascii_ply)(path, mesh.vertices, mesh.triangles)
    elif fmt == "obj":
        with open(path, "w") as fh:
            np.savetxt(fh, mesh.vertices, fmt="v " + FLOAT)
            np.savetxt(fh, mesh.triangles + 1, fmt="f %d %d %d")
    else:
        raise FormatError(f"{path}: meshes are written as .obj or .ply")


# ---------------------------------------------------------------- slices

def slice_points(axis, offset, resolution, domain):
    """Regular ``resolution x resolution`` lattice on the plane ``x[axis] = offset``.

    Returns ``(points, u_axis, v_axis)``; rows are ordered with ``v`` fastest.
    """
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")
    if not domain.lo[axis] <= offset <= domain.hi[axis]:
        raise ValueError("slice plane misses the domain")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    u_ax, v_ax = [a for a in range(3) if a != axis]
    u = np.linspace(domain.lo[u_ax], domain.hi[u_ax], resolution)
    v = np.linspace(domain.lo[v_ax], domain.hi[v_ax], resolution)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.empty((resolution * resolution, 3))
    pts[:, axis] = offset
    pts[:, u_ax] = uu.ravel()
    pts[:, v_ax] = vv.ravel()
    return pts, u_ax, v_ax


def export_slice(field, axis, offset, resolution, path, domain=None):
    """Write ``u, v, d, G_u, G_v`` rows (plus the off-plane ``G_w``) for contour and quiver plots."""
    from .geometry import Domain
    pts, u_ax, v_ax = slice_points(axis, offset, resolution, domain or Domain())
    F = np.asarray(field.esp(pts))
    d = np.linalg.norm(F, axis=1)
    safe = np.where(d > 1e-12, d, 1.0)
    G = np.where(d[:, None] > 1e-12, F / safe[:, None], np.array([0.0, 0.0, 1.0]))
    names = "xyz"
    rows = np.column_stack([pts[:, u_ax], pts[:, v_ax], d, G[:, u_ax], G[:, v_ax], G[:, axis]])
    with open(path, "w") as fh:
        fh.write(f"u,v,d,G_u,G_v,G_w,# u={names[u_ax]} v={names[v_ax]} {names[axis]}={float(offset)!r}\n")
        np.savetxt(fh, rows, fmt="%.17g", delimiter=",")
    return len(pts)


def read_slice(path):
    with open(path) as fh:
        next(fh)
        return np.loadtxt(fh, delimiter=",", ndmin=2)


# ---------------------------------------------------------------- run configuration

@dataclasses.dataclass
class RunConfig:
    """Everything a run needs, with defaults; parsed from ``key = value`` lines."""

    input: str = ""
    shape: str = ""
    profile: str = "desk"
    seed: int = 0
    output_dir: str = "run"
    count: int = 1000
    # training
    epochs: int = 3000
    lr0: float = 1e-3
    decay_factor: float = 0.99
    decay_every: int = 2000
    surface_batch: int = 20000
    domain_batch: int = 2000
    checkpoint_every: int = 0
    # loss weights
    lambda_gm: float = 0.06
    lambda_sp: float = 0.01
    lambda_ma: float = 0.08
    delta_eps: float = 0.03
    # extraction
    resolution: int = 64
    eta: float = 0.0  # 0: 2 / resolution
    samples_per_cell: int = 200
    enlargement: float = 0.07
    smooth_iterations: int = 3
    smooth_step: float = 0.5
    min_component_fraction: float = 0.0
    edge_crossing: bool = True
    include_corners: bool = True

    def __post_init__(self):
        if self.profile not in ("desk", "paper"):
            raise ValueError(f"profile must be desk or paper, not {self.profile!r}")

    @classmethod
    def fields(cls):
        return {f.name: f for f in dataclasses.fields(cls)}

    @classmethod
    def parse(cls, text, source="<config>"):
        fields = cls.fields()
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            key, sep, raw = s.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep:
                raise ValueError(f"{source}:{lineno}: expected key = value")
            if key not in fields:
                raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(raw, type(fields[key].default))
            except ValueError:
                raise ValueError(f"{source}:{lineno}: bad value {raw!r} for {key}") from None
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read(), path)

    def update(self, **overrides):
        fields = self.fields()
        clean = {}
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in fields:
                raise ValueError(f"unknown key {k!r}")
            clean[k] = v
        return dataclasses.replace(self, **clean)

    def dump(self):
        return "".join(f"{k} = {_render(v)}\n" for k, v in dataclasses.asdict(self).items())

    def loss_weights(self):
        return LossWeights(self.lambda_gm, self.lambda_sp, self.lambda_ma, self.delta_eps)

    def train_config(self, progress_every=0):
        return TrainConfig(epochs=self.epochs, lr0=self.lr0, decay_factor=self.decay_factor,
                           decay_every=self.decay_every, weights=self.loss_weights(),
                           sampler=SamplerConfig(self.surface_batch, self.domain_batch, self.seed),
                           checkpoint_every=self.checkpoint_every, progress_every=progress_every,
                           seed=self.seed)

    def extraction_config(self):
        return ExtractionConfig(resolution=self.resolution, eta=self.eta or None,
                                samples_per_cell=self.samples_per_cell, enlargement=self.enlargement,
                                smooth_iterations=self.smooth_iterations, smooth_step=self.smooth_step,
                                min_component_fraction=self.min_component_fraction,
                                edge_crossing=self.edge_crossing, include_corners=self.include_corners)


def _coerce(raw, kind):
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if kind is str:
        return raw.strip("\"'")
    return kind(raw)


def _render(v):
    return repr(float(v)) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else str(v)


def write_manifest(path, command, config, artifacts=None, extra=None):
    """JSON record of a run: resolved config, seed, versions and produced files."""
    import scipy
    import sklearn
    from . import __version__
    manifest = {
        "command": command,
        "config": dataclasses.asdict(config) if dataclasses.is_dataclass(config) else dict(config),
        "seed": getattr(config, "seed", None),
        "versions": {"nsp": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "scikit-learn": sklearn.__version__},
        "argv": sys.argv,
        "artifacts": artifacts or {},
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return manifest
