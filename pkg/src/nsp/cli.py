"""Command line entry point: ``nsp <subcommand> ...``.

Subcommands: train, extract, eval, slice, make-toy, corrupt.  Every command
writes a JSON manifest next to its output.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import io as nio
from . import oracle
from .extraction import NoSurfaceError, extract
from .field import MlpConfig, NeuralField, load_checkpoint, save_checkpoint
from .geometry import Domain, normalize_cloud
from .metrics import append_csv, evaluate
from .sampler import add_gaussian_noise, subsample
from .trainer import TrainingError, train

AXES = {"x": 0, "y": 1, "z": 2}


def _config(args):
    cfg = nio.RunConfig.load(args.config) if getattr(args, "config", None) else nio.RunConfig()
    overrides = {k: v for k, v in vars(args).items() if k in nio.RunConfig.fields()}
    return cfg.update(**overrides)


def _args(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def _manifest_path(out):
    return os.path.join(out, "manifest.json") if os.path.isdir(out) else out + ".manifest.json"


def cmd_train(args):
    cfg = _config(args)
    os.makedirs(cfg.output_dir, exist_ok=True)
    cloud = nio.read_point_cloud(cfg.input)
    if args.no_normalize:
        if not Domain().contains(cloud.points).all():
            raise ValueError("cloud leaves [-1, 1]^3; drop --no-normalize")
        pts, scale, offset = cloud.points, 1.0, np.zeros(3)
    else:
        norm, scale, offset = normalize_cloud(cloud)
        pts = norm.points
    model = MlpConfig.paper() if cfg.profile == "paper" else MlpConfig.desk()
    ckpt = os.path.join(cfg.output_dir, "checkpoint.npz")
    log_path = os.path.join(cfg.output_dir, "train_log.csv")
    start = time.time()
    params, log = train(pts, model, cfg.train_config(args.progress), checkpoint_dir=cfg.output_dir,
                        log_path=log_path)
    save_checkpoint(ckpt, params, model, cfg.seed, cfg.epochs,
                    extra={"scale": float(scale), "offset": [float(v) for v in offset]})
    with open(os.path.join(cfg.output_dir, "config.txt"), "w") as fh:
        fh.write(cfg.dump())
    nio.write_manifest(os.path.join(cfg.output_dir, "manifest.json"), "train", cfg,
                       {"checkpoint": ckpt, "log": log_path},
                       {"seconds": round(time.time() - start, 1), "final": log.rows[-1] if log.rows else {}})
    print(f"wrote {ckpt}")
    return 0


def _load_field(path):
    params, model, header = load_checkpoint(path)
    extra = header.get("extra", {})
    return NeuralField(params, model), float(extra.get("scale", 1.0)), np.asarray(extra.get("offset", [0.0] * 3))


def cmd_extract(args):
    cfg = _config(args)
    field, scale, offset = _load_field(args.checkpoint)
    mesh = extract(field, cfg.extraction_config(), np.random.default_rng(cfg.seed))
    mesh = mesh.transformed(scale, offset)
    nio.write_mesh(mesh, args.out)
    nio.write_manifest(_manifest_path(args.out), "extract", cfg,
                       {"checkpoint": args.checkpoint, "mesh": args.out}, {"stages": mesh.info})
    print(json.dumps({k: v for k, v in mesh.info.items() if k != "source"}))
    return 0


def _load_for_eval(path):
    if path.endswith(".xyz"):
        return nio.read_point_cloud(path)
    mesh = nio.read_mesh(path)
    return mesh if not mesh.is_empty else nio.read_point_cloud(path)


def cmd_eval(args):
    a, b = _load_for_eval(args.a), _load_for_eval(args.b)
    report = evaluate(a, b, args.samples, np.random.default_rng(args.seed))
    row = report.as_row(a=args.a, b=args.b)
    if args.csv:
        append_csv(args.csv, row)
    print(json.dumps(row))
    return 0


def cmd_slice(args):
    field, scale, offset = _load_field(args.checkpoint)
    n = nio.export_slice(field, AXES[args.axis], args.offset, args.resolution, args.out)
    nio.write_manifest(_manifest_path(args.out), "slice", _args(args), {"csv": args.out})
    print(f"wrote {n} rows to {args.out}")
    return 0


def cmd_make_toy(args):
    shape = oracle.PRESETS[args.shape]
    cloud = oracle.sample_shape(shape, args.count, np.random.default_rng(args.seed))
    nio.write_point_cloud(cloud, args.out)
    nio.write_manifest(_manifest_path(args.out), "make-toy", _args(args), {"cloud": args.out})
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def cmd_corrupt(args):
    if args.noise is None and args.subsample is None:
        raise ValueError("give --noise and/or --subsample")
    cloud = nio.read_point_cloud(args.input)
    rng = np.random.default_rng(args.seed)
    if args.subsample is not None:
        cloud = subsample(cloud, args.subsample, rng)
    if args.noise is not None:
        cloud = add_gaussian_noise(cloud, args.noise, rng)
    nio.write_point_cloud(cloud, args.out)
    nio.write_manifest(_manifest_path(args.out), "corrupt", _args(args), {"cloud": args.out})
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="nsp", description="Neural shortest-path surface reconstruction.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a field to a point cloud")
    t.add_argument("input", nargs="?", help="point cloud (.xyz, .obj, .ply)")
    t.add_argument("--config", help="key = value run configuration")
    t.add_argument("--out", dest="output_dir", help="output directory")
    t.add_argument("--profile", choices=["desk", "paper"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lambda-ma", dest="lambda_ma", type=float)
    t.add_argument("--delta-eps", dest="delta_eps", type=float)
    t.add_argument("--domain-batch", dest="domain_batch", type=int)
    t.add_argument("--surface-batch", dest="surface_batch", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--no-normalize", action="store_true", help="train on raw coordinates (must lie in [-1,1]^3)")
    t.add_argument("--progress", type=int, default=0, help="print losses every N epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="mesh a trained field")
    e.add_argument("checkpoint")
    e.add_argument("--out", required=True, help="mesh path (.obj or .ply)")
    e.add_argument("--config")
    e.add_argument("--resolution", type=int)
    e.add_argument("--samples-per-cell", dest="samples_per_cell", type=int)
    e.add_argument("--smooth-iterations", dest="smooth_iterations", type=int)
    e.add_argument("--min-component-fraction", dest="min_component_fraction", type=float)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_extract)

    v = sub.add_parser("eval", help="Chamfer / Hausdorff between two meshes or clouds")
    v.add_argument("a")
    v.add_argument("b")
    v.add_argument("--samples", type=int, default=100_000, help="points sampled per mesh")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--csv", help="append the report to this CSV")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("slice", help="export a cross-section of d and G as CSV")
    s.add_argument("checkpoint")
    s.add_argument("--axis", choices=list(AXES), default="z")
    s.add_argument("--offset", type=float, default=0.0)
    s.add_argument("--resolution", type=int, default=128)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_slice)

    m = sub.add_parser("make-toy", help="sample an analytic toy shape")
    m.add_argument("shape", choices=sorted(oracle.PRESETS))
    m.add_argument("--count", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_toy)

    c = sub.add_parser("corrupt", help="add noise to and/or subsample a cloud")
    c.add_argument("input")
    c.add_argument("--noise", type=float, help="Gaussian standard deviation")
    c.add_argument("--subsample", type=float, help="fraction of points kept")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corrupt)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "train" and not args.input and not args.config:
        build_parser().error("train needs an input cloud or a --config naming one")
    try:
        return args.func(args)
    except (OSError, ValueError, NoSurfaceError, TrainingError) as exc:
        print(f"nsp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
