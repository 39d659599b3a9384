"""``panodepth`` command line: dataset generation, training, inference, SGM,
fusion, evaluation and gradient checking.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Results go to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from panodepth.errors import DataError, NumericError, PanoDepthError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _rig_from(baseline, width, height):
    from panodepth.geometry import RigConfig
    try:
        return RigConfig(baseline, width, height)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args):
    from panodepth import scenegen
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    rig = _rig_from(args.baseline, args.width, args.height)
    params = scenegen.SceneParams(baseline=args.baseline)
    print(scenegen.make_dataset(args.seed, args.count, rig, params, args.out))


def cmd_train(args):
    from panodepth import padenet, trainer
    from panodepth.panorama_io import RunConfig, parse_config, save_checkpoint, write_config
    config = parse_config(args.config) if args.config else RunConfig()
    regimen = args.regimen or config.regimen
    config = config.replace(regimen=regimen)
    needs_gt = regimen != "unsupervised"
    data = trainer.StereoDataset.from_dir(args.data, with_gt=needs_gt)
    val = trainer.StereoDataset.from_dir(args.val) if args.val else None
    rig = data.rig
    model_cfg = padenet.PadeNetConfig(height=rig.height, width=rig.width)
    model = padenet.build(model_cfg, seed=config.seed)
    os.makedirs(args.out, exist_ok=True)
    write_config(config, os.path.join(args.out, "config.txt"))
    run = trainer.train(regimen, model, data, val, config, args.out)
    tag = "fused" if regimen == "fused" else regimen
    best = os.path.join(args.out, "best.ckpt")
    save_checkpoint(run.best_state, trainer.checkpoint_meta(model, rig, tag, regimen=regimen,
                                                            epoch=run.best_epoch or len(run.history),
                                                            seed=config.seed), best)
    sys.stdout.write(run.log_text())
    print(f"best {best}")


def _read_rgb(path):
    from panodepth.panorama_io import read_ppm
    return read_ppm(path)


def cmd_infer(args):
    from panodepth import trainer
    from panodepth.geometry import RigConfig
    from panodepth.panorama_io import Panorama, write_pfm, write_pgm_visualization
    model, meta = trainer.model_from_checkpoint(args.checkpoint)
    rgb = _read_rgb(args.rgb)
    cfg = model.config
    if (rgb.height, rgb.width) != (cfg.height, cfg.width):
        raise DataError(f"image is {rgb.height}x{rgb.width}, checkpoint expects {cfg.height}x{cfg.width}")
    baseline = args.baseline if args.baseline is not None else float(meta.get("rig.baseline", "nan"))
    if not np.isfinite(baseline):
        raise UsageError("checkpoint carries no baseline; pass --baseline")
    rig = RigConfig(baseline, cfg.width, cfg.height,
                    float(meta.get("rig.fov_w", 2 * np.pi)), float(meta.get("rig.fov_h", np.pi)))
    disp = trainer.predict_disparity(model, rgb.data.transpose(2, 0, 1)[None].astype(np.float32))[0]
    depth = trainer.disparity_maps_to_depth(disp, rig)
    os.makedirs(args.out, exist_ok=True)
    write_pfm(Panorama(disp, "disparity"), os.path.join(args.out, "disparity.pfm"))
    depth_pano = Panorama(depth.astype(np.float32), "depth")
    write_pfm(depth_pano, os.path.join(args.out, "depth.pfm"))
    if args.vis:
        write_pgm_visualization(depth_pano, os.path.join(args.out, "depth.pgm"), cap=args.cap)
    print(f"disparity_min={float(disp.min())!r} disparity_max={float(disp.max())!r}")
    print(os.path.join(args.out, "depth.pfm"))


def cmd_sgm(args):
    from panodepth import sgm
    from panodepth.panorama_io import write_pfm
    top, bottom = _read_rgb(args.top), _read_rgb(args.bottom)
    if (top.height, top.width) != (bottom.height, bottom.width):
        raise DataError(f"top is {top.height}x{top.width} but bottom is {bottom.height}x{bottom.width}")
    rig = _rig_from(args.baseline, top.width, top.height)
    try:
        params = sgm.SgmParams(cost=args.cost, p1=args.p1, p2=args.p2, num_paths=args.paths,
                               num_disp=args.num_disp, max_disparity=args.max_disparity,
                               uniqueness=args.uniqueness, median_window=args.median)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    disp, depth = sgm.sgm_depth(top, bottom, rig, params)
    os.makedirs(args.out, exist_ok=True)
    write_pfm(disp, os.path.join(args.out, "disparity.pfm"))
    write_pfm(depth, os.path.join(args.out, "depth.pfm"))
    print(f"valid_fraction={float(np.mean(disp.data > 0))!r}")
    print(os.path.join(args.out, "depth.pfm"))


def cmd_fuse(args):
    from panodepth import fusion
    from panodepth.panorama_io import read_pfm, write_pfm
    fused, report = fusion.fuse(read_pfm(args.network), read_pfm(args.sgm), cap=args.cap, mode=args.mode)
    write_pfm(fused, args.out)
    text = report.to_text()
    with open(args.out + ".report.txt", "w", encoding="ascii") as f:
        f.write(text)
    sys.stdout.write(text)


def cmd_eval(args):
    from panodepth.metrics import compute_metrics
    from panodepth.panorama_io import read_pfm
    report = compute_metrics(read_pfm(args.pred), read_pfm(args.gt), cap=args.cap)
    sys.stdout.write(report.to_text() if args.format == "kv" else report.table("pred"))


def cmd_gradcheck(args):
    from panodepth import gradsuite
    names = None if args.all or not args.op else args.op
    try:
        results = gradsuite.run_suite(names, precision=args.precision)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    failed = []
    for name, err in results.items():
        ok = err < gradsuite.TOLERANCE
        print(f"{name} {err:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panodepth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="render a synthetic stereo dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--baseline", type=float, default=0.26)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train the depth network")
    s.add_argument("--regimen", choices=("supervised", "unsupervised", "fused"))
    s.add_argument("--data", required=True, help="dataset directory with manifest.txt")
    s.add_argument("--val", help="validation dataset used to pick the best epoch")
    s.add_argument("--config", help="key = value run configuration")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="predict disparity and depth for one panorama")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--rgb", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--baseline", type=float, help="override the baseline stored in the checkpoint")
    s.add_argument("--vis", action="store_true", help="also write a tone-mapped depth.pgm")
    s.add_argument("--cap", type=float, default=20.0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("sgm", help="semi-global matching on a vertical stereo pair")
    s.add_argument("--top", required=True)
    s.add_argument("--bottom", required=True)
    s.add_argument("--baseline", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cost", choices=("census", "sad"), default="census")
    s.add_argument("--p1", type=float, default=8.0)
    s.add_argument("--p2", type=float, default=96.0)
    s.add_argument("--paths", type=int, choices=(4, 8), default=8)
    s.add_argument("--num-disp", type=int, default=64)
    s.add_argument("--max-disparity", type=float, help="radians; derived from the rig when omitted")
    s.add_argument("--uniqueness", type=float, default=0.95)
    s.add_argument("--median", type=int, default=3, help="median filter window")
    s.set_defaults(func=cmd_sgm)

    s = sub.add_parser("fuse", help="rescale network depth to the SGM median")
    s.add_argument("--network", required=True)
    s.add_argument("--sgm", required=True)
    s.add_argument("--mode", choices=("anchor", "literal"), default="anchor")
    s.add_argument("--cap", type=float, default=20.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("eval", help="depth metrics of a prediction against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--cap", type=float, default=20.0)
    s.add_argument("--format", choices=("table", "kv"), default="table")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference checks of every differentiable op")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--op", action="append", help="check only this op (repeatable)")
    g.add_argument("--all", action="store_true")
    s.add_argument("--precision", type=int, choices=(32, 64), default=32)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        print(f"panodepth {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"panodepth {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PanoDepthError, OSError) as exc:
        print(f"panodepth {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
