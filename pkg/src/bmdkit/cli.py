"""Command-line driver: ``bmdkit {synth,decompose,separate,metrics,info}``.

Every subcommand writes into a staging directory next to ``--out`` and moves
the results into place only when it succeeds, so a failed run leaves no
partial outputs.  Exit codes:

    0   success
    1   unclassified bmdkit error
    2   bad argument or configuration (also argparse usage errors)
    3   dimension or index mismatch
    4   invalid input values (NaN, zero norm, ...)
    5   numerical failure
    6   ALS divergence
    7   file system error
    10-15   corrupt container (10 generic, 11 magic, 12 version,
            13 truncated, 14 checksum, 15 dims overflow)
    20  malformed PGM/PPM frames
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .als_color import ChannelCoupling, als4_init, bmd_als4, separate4
from .als_engine import Regularization, SolveOptions, bmd_als, separate
from .bm_algebra import Bmd4Factors, bm_rank_upper_bound, bmp, bmp4
from .errors import BmdError, DimensionError, ParameterError
from .generative_model import (
    ObjectSpec,
    color_two_object_scenario,
    linear_trajectory,
    synth_video,
    synthetic_background,
    two_object_scenario,
)
from .init_factorizations import dmd_segmented_init, slicewise_svd_init
from .io_codec import (
    read_factors,
    read_frames,
    read_pnm,
    read_tensor,
    read_tensor_header,
    write_factors,
    write_frames,
    write_pnm,
    write_tensor,
)
from .metrics import compression_ratio, evaluate_background
from .tensor_core import relative_error

log = logging.getLogger("bmdkit")

IO_EXIT = 7
TRACE_COLUMNS = ("sweep", "misfit", "psi", "rel_change", "re", "seconds")
_NOT_CONFIG = {"config", "dump_config", "func"}
# positionals may come from a config file, so argparse treats them as optional
_POSITIONALS = {"decompose": ("input",), "separate": ("factors",), "info": ("path",)}


def _add_common(p):
    p.add_argument("--config", help="JSON file with option values (command-line flags win)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved options as JSON and exit")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $BMDKIT_THREADS or 1)")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG report figures")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bmdkit", description="BM decompositions of video tensors.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic video with ground truth")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", choices=["two-object", "single", "static"], default="two-object")
    p.add_argument("--background", choices=["perlin", "gradient", "constant"], default="perlin")
    p.add_argument("--height", type=int, default=50)
    p.add_argument("--width", type=int, default=50)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--color", action="store_true", help="three channels with shared motion (two-object only)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="fit a BM decomposition")
    _add_common(p)
    p.add_argument("input", nargs="?", help="tensor container (.bmdt) or directory of PGM/PPM frames")
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--init", choices=["svd", "dmd"], default="svd")
    p.add_argument("--color", action="store_true", help="fourth-order model with channel coupling")
    p.add_argument("--max-sweeps", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--lambda1", type=float, default=0.01, help="penalty on the background terms of A")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="penalty on the other terms of A")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--no-reg", action="store_true", help="unregularized minimum-norm sweeps")
    p.add_argument("--dmd-delta", type=float, default=1e-2)
    p.add_argument("--dmd-segment", type=int, default=None)
    p.add_argument("--coupling-weight", type=float, default=1.0)
    p.add_argument("--color-lambda", action="store_true", help="also penalize A in the color model")
    p.add_argument("--scale", choices=["raw", "unit"], default="raw")
    p.add_argument("--seed", type=int, default=0, help="recorded for reproducibility; the fit is deterministic")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("separate", help="write background and foreground videos")
    _add_common(p)
    p.add_argument("factors", nargs="?", help="factor bundle (.bmdf)")
    p.add_argument("--out", required=True)
    p.add_argument("--bg-terms", type=int, nargs="+", default=None, help="background term indices (default: from bundle)")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("metrics", help="reconstruction and background metrics")
    _add_common(p)
    p.add_argument("--video", required=True, help="tensor container or frame directory")
    p.add_argument("--factors", required=True)
    p.add_argument("--gt-background", default=None, help="ground-truth background image (.pgm or .bmdt)")
    p.add_argument("--mode", choices=["per_frame_mean", "first_frame"], default="per_frame_mean")
    p.add_argument("--tau", type=float, default=20.0)
    p.add_argument("--bg-terms", type=int, nargs="+", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--scale", choices=["raw", "unit"], default="raw")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("info", help="print container headers and a BM-rank bound")
    _add_common(p)
    p.add_argument("path", nargs="?")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_info)
    return parser


class _Staging:
    """Collect outputs in a hidden sibling directory, then move them into ``out``."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))
        self.dir.chmod(0o755)

    def path(self, *parts) -> Path:
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def commit(self):
        if not self.out.exists():
            os.replace(self.dir, self.out)
            return
        for entry in sorted(self.dir.iterdir()):
            dest = self.out / entry.name
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            elif dest.exists():
                dest.unlink()
            os.replace(entry, dest)
        self.dir.rmdir()

    def discard(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def _load_video(path, scale="raw"):
    path = Path(path)
    if path.is_dir():
        return read_frames(path, scale=scale)
    return read_tensor(path)


def _write_kv(path, items):
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k}={_fmt(v)}\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([r.sweep, repr(r.misfit), repr(r.psi), repr(r.rel_change), repr(r.re), f"{r.seconds:.6f}"])


def _figures(args):
    return not args.no_figures


def cmd_synth(args, stage):
    if args.color:
        if args.scenario != "two-object":
            raise ParameterError("--color is only available for the two-object scenario")
        X, videos = color_two_object_scenario(args.height, args.width, args.frames, args.seed, args.background)
        A = np.stack([v.factors.A for v in videos], axis=3)
        B = np.stack([v.factors.B for v in videos], axis=3)
        C = np.stack([v.factors.C for v in videos], axis=3)
        truth = Bmd4Factors(A, B, C)
        bg_image = np.stack([v.background_image for v in videos], axis=2)
        rank = videos[0].rank
    else:
        m, n, p = args.height, args.width, args.frames
        if args.scenario == "two-object":
            video = two_object_scenario(m, n, p, args.seed, args.background)
        else:
            bg = synthetic_background(args.background, m, n, args.seed)
            objects = []
            if args.scenario == "single":
                size = (max(1, m // 10), max(1, n // 10))
                speed = (n - size[1]) / max(1, p - 1)
                objects.append(ObjectSpec(85.0, size, linear_trajectory((m // 3, 0), (0, speed), p)))
            video = synth_video(bg, objects, p)
        X, truth, bg_image, rank = video.X, video.factors, video.background_image, video.rank
    write_tensor(stage.path("video.bmdt"), X)
    write_frames(X, stage.path("frames"))
    write_factors(stage.path("truth.bmdf"), truth, {"bg_terms": [0], "source": "synth"})
    write_pnm(stage.path("background.pnm" if args.color else "background.pgm"), bg_image)
    write_tensor(stage.path("background.bmdt"), bg_image[:, None] if bg_image.ndim == 3 else bg_image[:, None, :])
    items = [("dims", list(X.shape)), ("rank", rank), ("scenario", args.scenario), ("seed", args.seed)]
    _write_kv(stage.path("synth.txt"), items)
    for k, v in items:
        print(f"{k}={_fmt(v)}")


def _regularization(args, rank, bg_terms):
    if args.no_reg:
        return Regularization.off(rank)
    return Regularization.default(rank, args.lambda1, args.lam, args.beta, args.gamma, bg_terms)


def cmd_decompose(args, stage):
    X = _load_video(args.input, args.scale)
    opts_kw = dict(max_sweeps=args.max_sweeps, rel_tol=args.tol, workers=args.threads)
    if X.ndim == 4 and not args.color:
        raise DimensionError("input is a color video; pass --color")
    if args.color:
        if X.ndim != 4:
            raise DimensionError("--color needs a fourth-order input")
        if args.init != "svd":
            raise ParameterError("the color model supports only --init svd")
        init = als4_init(X, args.rank)
        bg_terms = (0,)
        coupling = ChannelCoupling(True, args.coupling_weight)
        lambdas = None
        if args.color_lambda and not args.no_reg:
            lambdas = Regularization.default(args.rank, args.lambda1, args.lam, background_terms=bg_terms).lambdas
        factors, report = bmd_als4(X, init, SolveOptions(**opts_kw), coupling, lambdas)
        reg_meta = {"coupling_weight": coupling.weight, "lambdas": None if lambdas is None else list(lambdas)}
        Xhat = bmp4(factors)
    else:
        if args.init == "svd":
            init = slicewise_svd_init(X, args.rank)
            bg_terms = (0,)
        else:
            init, bg_terms = dmd_segmented_init(X, args.rank, args.dmd_segment, args.dmd_delta)
            if not bg_terms:
                log.warning("no DMD eigenvalue within %g of the unit circle; using term 0", args.dmd_delta)
                bg_terms = (0,)
        reg = _regularization(args, init.rank, bg_terms)
        factors, report = bmd_als(X, init, SolveOptions(regularization=reg, **opts_kw))
        reg_meta = reg.as_dict()
        Xhat = bmp(factors)
    re = relative_error(X, Xhat)
    m, p, n = X.shape[:3]
    cr = compression_ratio(m, p, n, factors.rank)
    meta = {
        "bg_terms": [int(t) for t in bg_terms],
        "init": args.init,
        "regularization": reg_meta,
        "sweeps": report.sweeps_run,
        "termination": report.reason,
    }
    write_factors(stage.path("factors.bmdf"), factors, meta)
    _write_trace(stage.path("trace.csv"), report.trace)
    items = [
        ("dims", list(X.shape)),
        ("rank", factors.rank),
        ("init", args.init),
        ("sweeps", report.sweeps_run),
        ("termination", report.reason),
        ("relative_error", re),
        ("compression_ratio", cr),
        ("monotone", report.is_monotone()),
    ]
    _write_kv(stage.path("report.txt"), items)
    if _figures(args):
        from .plotting import plot_convergence

        plot_convergence(report.trace, stage.path("convergence.png"))
    for k, v in items:
        print(f"{k}={_fmt(v)}")


def _bg_terms(args, header, rank):
    terms = args.bg_terms if args.bg_terms is not None else header.get("bg_terms", [0])
    return [int(t) for t in terms] if terms else [0]


def cmd_separate(args, stage):
    factors, header = read_factors(args.factors)
    terms = _bg_terms(args, header, factors.rank)
    if isinstance(factors, Bmd4Factors):
        bg, fg = separate4(factors, terms)
        X = bmp4(factors)
    else:
        bg, fg = separate(factors, terms)
        X = bmp(factors)
    write_tensor(stage.path("background.bmdt"), bg)
    write_tensor(stage.path("foreground.bmdt"), fg)
    write_frames(bg, stage.path("background"))
    # signed foreground is stored exactly in the container; frames show its magnitude
    write_frames(np.abs(fg), stage.path("foreground"))
    if _figures(args):
        from .plotting import plot_separation

        plot_separation(X, bg, np.abs(fg), stage.path("separation.png"))
    items = [("dims", list(X.shape)), ("bg_terms", terms), ("frames", X.shape[1])]
    _write_kv(stage.path("separate.txt"), items)
    for k, v in items:
        print(f"{k}={_fmt(v)}")


def _load_gt(path, scale):
    path = Path(path)
    if path.suffix in (".pgm", ".ppm", ".pnm"):
        img = read_pnm(path)
        return img / 255.0 if scale == "unit" else img
    T = read_tensor(path)
    return T[:, 0]


def cmd_metrics(args, stage):
    X = _load_video(args.video, args.scale)
    factors, header = read_factors(args.factors)
    if tuple(X.shape) != tuple(factors.dims):
        raise DimensionError(f"video {X.shape} and factors {factors.dims} disagree")
    color = isinstance(factors, Bmd4Factors)
    Xhat = bmp4(factors) if color else bmp(factors)
    m, p, n = X.shape[:3]
    items = [
        ("relative_error", relative_error(X, Xhat)),
        ("compression_ratio", compression_ratio(m, p, n, factors.rank)),
        ("rank", factors.rank),
    ]
    per_frame = None
    if args.gt_background:
        gt = _load_gt(args.gt_background, args.scale)
        terms = _bg_terms(args, header, factors.rank)
        bg, _ = separate4(factors, terms) if color else separate(factors, terms)
        if color:
            from .io_codec import LUMA_WEIGHTS

            w = np.array(LUMA_WEIGHTS)
            bg = bg @ w
            gt = gt @ w if gt.ndim == 3 else gt
        if args.scale == "unit":
            bg, gt = bg * 255.0, gt * 255.0
        rep = evaluate_background(gt, bg, args.mode, args.tau)
        items += list(rep.scalars().items())
        per_frame = rep.per_frame
    for k, v in items:
        print(f"{k}={_fmt(v)}")
    if args.out:
        _write_kv(stage.path("metrics.txt"), items)
        if per_frame is not None:
            names = list(per_frame)
            with open(stage.path("metrics.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["frame"] + names)
                for j in range(len(per_frame[names[0]])):
                    w.writerow([j] + [repr(float(per_frame[k][j])) for k in names])
            if _figures(args):
                from .plotting import plot_frame_metrics

                plot_frame_metrics(per_frame, stage.path("metrics.png"))


def cmd_info(args, stage):
    path = Path(args.path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"BMDF":
        factors, header = read_factors(path)
        for k in sorted(header):
            print(f"{k}={json.dumps(header[k], sort_keys=True)}")
        print("kind=factors")
        return
    head = read_tensor_header(path)
    print("kind=tensor")
    print(f"version={head['version']}")
    print(f"order={head['order']}")
    print(f"dims={_fmt(head['dims'])}")
    X = read_tensor(path)
    if X.ndim == 3:
        print(f"bm_rank_bound={bm_rank_upper_bound(X, args.tol)}")
    else:
        bounds = [bm_rank_upper_bound(X[..., z], args.tol) for z in range(X.shape[3])]
        print(f"bm_rank_bound={_fmt(bounds)}")


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ParameterError("config file must hold a JSON object")
    return cfg


def _resolve_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cfg = _load_config(known.config) if known.config else {}
    command = cfg.pop("command", None)
    if cfg:
        # config values become defaults, so flags given on the command line still win
        for sub in parser._subparsers._group_actions[0].choices.values():
            for action in sub._actions:
                if action.dest in cfg:
                    action.required = False
            sub.set_defaults(**{k: v for k, v in cfg.items() if k in {a.dest for a in sub._actions}})
    args = parser.parse_args(argv)
    if command is not None and command != args.command:
        raise ParameterError(f"config is for {command!r}, not {args.command!r}")
    unknown = set(cfg) - (set(vars(args)) - _NOT_CONFIG)
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    for dest in _POSITIONALS.get(args.command, ()):
        if getattr(args, dest) is None and not args.dump_config:
            raise ParameterError(f"{args.command}: missing required argument {dest!r}")
    return args


def dump_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _resolve_config(parser, argv)
    except BmdError as exc:
        print(f"bmdkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"bmdkit: error: {exc}", file=sys.stderr)
        return IO_EXIT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.dump_config:
        print(json.dumps(dump_config(args), indent=2, sort_keys=True))
        return 0
    if args.threads is not None and args.threads < 1:
        print("bmdkit: error: --threads must be at least 1", file=sys.stderr)
        return ParameterError.exit_code
    out = getattr(args, "out", None)
    stage = _Staging(out) if out else None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args, stage)
    except BmdError as exc:
        if stage:
            stage.discard()
        print(f"bmdkit: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        if stage:
            stage.discard()
        print(f"bmdkit: error: {exc}", file=sys.stderr)
        return IO_EXIT
    except BaseException:
        if stage:
            stage.discard()
        raise
    if stage:
        stage.commit()
    return 0


if __name__ == "__main__":
    sys.exit(main())
