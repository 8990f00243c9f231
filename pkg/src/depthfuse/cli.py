"""Command-line interface: ``depthfuse {synth,fuse,eval,bench}``.

Every command writes a JSON manifest with its full argument set. Passing that
manifest back with ``--config`` reruns the command with the same settings;
flags given explicitly on the command line take precedence.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 numerical failure.
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .camera import CameraIntrinsics
from .exceptions import DomainError, SolverError
from .grids import load_depth, load_normals, read_mask, read_pfm, write_pfm
from .metrics import (BenchResult, benchmark_report, long_format, mae_normals,
                      parse_report, rmse)
from .pipeline import FusionMethod, fuse
from .solver_tgv import TgvParams
from .synth import DEFAULT_SCENES, DegradationSpec, default_scene, degrade, save_scene

logger = logging.getLogger("depthfuse")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _add_fusion_params(p):
    g = p.add_argument_group("fusion parameters")
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--lambda0", type=float, default=1e-3)
    g.add_argument("--lambda1", type=float, default=1e-3)
    g.add_argument("--max-iter", type=int, default=2000, help="TGV iteration cap")
    g.add_argument("--rel-change-tol", type=float, default=1e-8)
    g.add_argument("--cg-tol", type=float, default=1e-9)
    g.add_argument("--cg-max-iter", type=int, default=10000)


def _add_degradation(p):
    g = p.add_argument_group("degradation")
    g.add_argument("--depth-sigma", type=float, default=1.0, help="mm")
    g.add_argument("--normal-sigma", type=float, default=0.1)
    g.add_argument("--gap-fraction", type=float, default=0.25)
    g.add_argument("--discard-fraction", type=float, default=0.5)
    g.add_argument("--perlin-scale", type=float, default=None,
                   help="Perlin cell size in pixels (default: width / 8)")
    g.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="depthfuse", description="Perspective-aware fusion of depth and normal maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene and its degraded observation")
    p.add_argument("--scene", choices=DEFAULT_SCENES, default="sphere")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--f", type=float, default=None, help="focal length in pixels")
    p.add_argument("--out", required=True)
    _add_degradation(p)

    p = sub.add_parser("fuse", help="fuse a depth map with a normal map")
    p.add_argument("--method", choices=[m.value for m in FusionMethod], required=True)
    p.add_argument("--depth", required=True, help="observed depth PFM (mm)")
    p.add_argument("--normals", required=True, help="normal map PFM")
    p.add_argument("--confidence", help="confidence PFM in [0, 1]")
    p.add_argument("--mask", help="domain mask PFM (default: non-zero normals)")
    p.add_argument("--camera", help="camera JSON with f, cu, cv")
    p.add_argument("--out", required=True, help="fused depth PFM")
    p.add_argument("--manifest", help="manifest path (default: <out>.json)")
    _add_fusion_params(p)

    p = sub.add_parser("eval", help="RMSE and MAE of a depth map against ground truth")
    p.add_argument("--depth", required=True, help="estimated depth PFM")
    p.add_argument("--gt", required=True, help="ground-truth depth PFM")
    p.add_argument("--normals-gt", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--scene", default="scene")
    p.add_argument("--method", default="method")
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("bench", help="run every method on every scene")
    p.add_argument("--scenes", default="sphere,plane,sinusoid",
                   help=f"comma-separated synthetic scenes from {DEFAULT_SCENES}")
    p.add_argument("--data", nargs="*", default=[],
                   help="directories in the synth layout to bench as extra scenes")
    p.add_argument("--methods", default="ortho,naive,pg,ptgv")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--external", help="CSV of extra method columns to merge")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $DEPTHFUSE_THREADS or CPU count)")
    p.add_argument("--out", required=True, help="output directory")
    _add_degradation(p)
    _add_fusion_params(p)

    for p in sub.choices.values():
        p.add_argument("--config", help="manifest JSON to take settings from")
    parser.commands = sub.choices
    return parser


def _config_path(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.config


def parse_args(argv=None):
    """Parse ``argv``; settings from ``--config`` become the defaults."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    command = next((a for a in argv if a in parser.commands), None)
    config = _config_path(argv)
    if config and command:
        try:
            manifest = json.loads(Path(config).read_text())
        except ValueError as exc:
            raise UsageError(f"config {config} is not valid JSON: {exc}") from None
        if not isinstance(manifest, dict) or manifest.get("command") != command:
            found = manifest.get("command") if isinstance(manifest, dict) else None
            raise UsageError(f"config {config} is for command {found!r}, not {command!r}")
        saved = dict(manifest.get("args", {}))
        sub = parser.commands[command]
        known = {a.dest for a in sub._actions}
        unknown = set(saved) - known
        if unknown:
            raise UsageError(f"config {config} has unknown keys {sorted(unknown)}")
        for action in sub._actions:
            if action.dest in saved:
                action.required = False
        sub.set_defaults(**saved)
    return parser.parse_args(argv)


def _fusion_params(args):
    try:
        return TgvParams(alpha=args.alpha, beta=args.beta, lambda0=args.lambda0,
                         lambda1=args.lambda1, max_iter=args.max_iter,
                         rel_change_tol=args.rel_change_tol, cg_tol=args.cg_tol,
                         cg_max_iter=args.cg_max_iter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _degradation(args):
    try:
        return DegradationSpec(depth_sigma=args.depth_sigma, normal_sigma=args.normal_sigma,
                               gap_fraction=args.gap_fraction,
                               discard_fraction=args.discard_fraction,
                               perlin_scale=args.perlin_scale, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _manifest(args, **extra):
    record = {"command": args.command, "version": __version__,
              "args": {k: v for k, v in vars(args).items()
                       if k not in ("command", "config", "verbose")}}
    record.update(extra)
    return record


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load_camera(path):
    try:
        return CameraIntrinsics.from_json(path)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"camera file {path}: missing or bad field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, DomainError):
            raise
        raise UsageError(f"camera file {path}: {exc}") from None


def _check_same_shape(fields):
    shapes = {name: a.shape[:2] for name, a in fields.items() if a is not None}
    if len(set(shapes.values())) > 1:
        listing = ", ".join(f"{n} {s[1]}x{s[0]}" for n, s in shapes.items())
        raise UsageError(f"input dimensions differ: {listing}")


def cmd_synth(args):
    spec = _degradation(args)
    if args.size < 8:
        raise UsageError("--size must be at least 8")
    scene = default_scene(args.scene, args.size, args.f)
    d_obs, kappa, n_obs, info = degrade(scene, spec, return_info=True)
    out = Path(args.out)
    save_scene(out, scene, d_obs, kappa, n_obs)
    zero = float(np.count_nonzero(kappa[scene.mask] == 0) / scene.mask.sum())
    _write_json(out / "manifest.json", _manifest(
        args, camera=scene.camera.to_dict(), degradation=dict(info, kappa_zero_fraction=zero)))
    logger.info("wrote %s scene to %s", args.scene, out)
    return EXIT_OK


def _load_inputs(args):
    depth = load_depth(args.depth)
    mask = read_mask(args.mask) if args.mask else None
    if mask is not None:
        probe = read_pfm(args.normals)
        _check_same_shape({"depth": depth, "normals": probe, "mask": mask})
    normals, mask = load_normals(args.normals, mask)
    conf = read_pfm(args.confidence) if args.confidence else None
    _check_same_shape({"depth": depth, "normals": normals, "mask": mask,
                       "confidence": conf})
    return depth, normals, conf, mask


def cmd_fuse(args):
    method = FusionMethod(args.method)
    if method.needs_camera and not args.camera:
        raise UsageError(f"method {method.value!r} needs --camera")
    params = _fusion_params(args)
    camera = _load_camera(args.camera) if args.camera else None
    depth, normals, conf, mask = _load_inputs(args)
    t0 = time.perf_counter()
    d_hat, info = fuse(method, depth, normals, conf, mask, camera, params,
                       return_info=True)
    elapsed = time.perf_counter() - t0
    write_pfm(d_hat, args.out)
    manifest = args.manifest or str(Path(args.out).with_suffix(".json"))
    _write_json(manifest, _manifest(args, solver=info, wall_time=elapsed))
    logger.info("%s fusion: %s, %.2f s", method.label, info, elapsed)
    return EXIT_OK


def _evaluate(d_hat, depth_gt, normals_gt, mask, camera):
    err = rmse(d_hat, depth_gt, mask)
    mae, excluded = mae_normals(d_hat, normals_gt, camera, mask, return_excluded=True)
    return err, mae, excluded


def cmd_eval(args):
    camera = _load_camera(args.camera)
    d_hat = load_depth(args.depth)
    gt = load_depth(args.gt)
    mask = read_mask(args.mask)
    n_gt = read_pfm(args.normals_gt)
    _check_same_shape({"depth": d_hat, "gt": gt, "normals_gt": n_gt, "mask": mask})
    err, mae, excluded = _evaluate(d_hat, gt, n_gt, mask, camera)
    text = (f"scene,method,rmse,mae,excluded\n"
            f"{args.scene},{args.method},{err!r},{mae!r},{excluded}\n")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _thread_count(args):
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("DEPTHFUSE_THREADS")
        try:
            n = int(env) if env else (os.cpu_count() or 1)
        except ValueError:
            raise UsageError(f"DEPTHFUSE_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _scene_from_dir(path):
    path = Path(path)
    camera = _load_camera(path / "camera.json")
    mask = read_mask(path / "mask.pfm")
    case = {"name": path.name, "camera": camera, "mask": mask,
            "depth_gt": load_depth(path / "depth_gt.pfm"),
            "normals_gt": read_pfm(path / "normals_gt.pfm"),
            "d_obs": load_depth(path / "d_obs.pfm"),
            "n_obs": read_pfm(path / "n_obs.pfm"),
            "kappa": read_pfm(path / "kappa.pfm")}
    _check_same_shape({k: case[k] for k in ("mask", "depth_gt", "normals_gt", "d_obs",
                                            "n_obs", "kappa")})
    return case


def _run_cell(case, method, params):
    t0 = time.perf_counter()
    try:
        d_hat = fuse(method, case["d_obs"], case["n_obs"], case["kappa"], case["mask"],
                     case["camera"], params)
        err, mae, excluded = _evaluate(d_hat, case["depth_gt"], case["normals_gt"],
                                       case["mask"], case["camera"])
    except (SolverError, DomainError, ValueError) as exc:
        logger.error("%s on %s failed: %s", method.label, case["name"], exc)
        return BenchResult(case["name"], method.label, float("nan"), float("nan"),
                           0, time.perf_counter() - t0)
    return BenchResult(case["name"], method.label, err, mae, excluded,
                       time.perf_counter() - t0)


def cmd_bench(args):
    params = _fusion_params(args)
    spec = _degradation(args)
    try:
        methods = [FusionMethod(m.strip()) for m in args.methods.split(",") if m.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    names = [s.strip() for s in args.scenes.split(",") if s.strip()]
    bad = [s for s in names if s not in DEFAULT_SCENES]
    if bad:
        raise UsageError(f"unknown scenes {bad}; choose from {DEFAULT_SCENES}")
    if not methods or not (names or args.data):
        raise UsageError("bench needs at least one method and one scene")
    external = parse_report(Path(args.external).read_text()) if args.external else []
    n_threads = _thread_count(args)

    t0 = time.perf_counter()
    cases = []
    for name in names:
        scene = default_scene(name, args.size)
        d_obs, kappa, n_obs = degrade(scene, spec)
        cases.append({"name": name, "camera": scene.camera, "mask": scene.mask,
                      "depth_gt": scene.depth_gt, "normals_gt": scene.normals_gt,
                      "d_obs": d_obs, "n_obs": n_obs, "kappa": kappa})
    cases += [_scene_from_dir(p) for p in args.data]

    jobs = [(case, m) for case in cases for m in methods]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        results = list(pool.map(lambda job: _run_cell(job[0], job[1], params), jobs))
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(benchmark_report(results, external))
    (out / "long.csv").write_text(long_format(results))
    cells = [{"scene": r.scene, "method": r.method, "rmse": r.rmse, "mae": r.mae,
              "excluded": r.excluded, "seconds": r.seconds} for r in results]
    _write_json(out / "manifest.json", _manifest(args, threads=n_threads,
                                                 wall_time=elapsed, cells=cells))
    logger.info("bench: %d cells in %.1f s", len(results), elapsed)
    if all(np.isnan(r.rmse) for r in results):
        logger.error("every bench cell failed")
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "fuse": cmd_fuse, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None):
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"depthfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"depthfuse: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"depthfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"depthfuse: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, DomainError) as exc:
        print(f"depthfuse: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"depthfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
