"""``wsseg`` command-line front end.

Exit status: 0 on success, 1 on invalid input or usage, 2 when a run fails.
The ``SEED`` environment variable, when set, replaces the seed of every
stochastic command.
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import model as M
from . import weaklabel as WL
from .colorspace import recombine, split_pretext_channels
from .config import ConfigError, parse_config
from .core import PLYError, PointCloud, build_index, generate_scene, load_ply, save_ply
from .metrics import report, write_report
from .propagation import DENSE_MAX_POINTS, dense_graph_propagate, propagate
from .training import PreparedScene, evaluate, train_pretext, train_weak

log = logging.getLogger("wsseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _seed(default):
    env = os.environ.get("SEED")
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"SEED must be an integer, got {env!r}") from None


def _scene_files(directory):
    files = sorted(Path(directory).glob("*.ply"))
    if not files:
        raise ValueError(f"no .ply files in {directory}")
    return files


def _load_scenes(directory, k):
    return [PreparedScene(load_ply(p), k) for p in _scene_files(directory)]


def _train_config(cfg):
    tc = cfg.train_config()
    return replace(tc, seed=_seed(tc.seed))


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_scenes(args):
    cfg = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = _seed(cfg.scene.seed)
    for i in range(cfg.num_scenes):
        spec = replace(cfg.scene, seed=base + i)
        path = out / f"scene_{i:03d}.ply"
        save_ply(generate_scene(spec), path)
        log.info("wrote %s", path)
    return 0


def cmd_pretrain(args):
    cfg = parse_config(args.config)
    tc = _train_config(cfg)
    scenes = _load_scenes(args.scenes, tc.k)
    params, hist = train_pretext(scenes, tc)
    M.save_checkpoint(params, args.out)
    log.info("pretext loss %.5f -> %.5f", hist.records[0].loss_pretext, hist.records[-1].loss_pretext)
    return 0


def cmd_weak_label(args):
    cloud = load_ply(args.scene)
    seed = _seed(args.seed)
    if args.scheme == "1pt":
        weak = WL.sample_one_point(cloud, seed)
    elif args.scheme == "fraction":
        if args.fraction is None:
            raise ConfigError("--fraction is required for the fraction scheme")
        weak = WL.sample_fraction(cloud, args.fraction, seed)
    else:
        weak = WL.sample_superpoint(cloud, build_index(cloud.positions), args.regions,
                                   args.radius, seed)
    weak.save(args.out)
    log.info("%d labelled points", len(weak))
    return 0


def _load_init(path, num_classes, seed):
    params = M.load_checkpoint(path)
    if params.has_head(M.SEG):
        return params
    return M.transfer_encoder(params, num_classes, seed=seed)


def cmd_train(args):
    cfg = parse_config(args.config)
    tc = _train_config(cfg)
    if args.no_propagation:
        tc = replace(tc, lambda_mode="off")
    files = _scene_files(args.scenes)
    scenes = [PreparedScene(load_ply(p), tc.k) for p in files]
    weak = []
    for p, scene in zip(files, scenes):
        label_file = Path(args.labels) / f"{p.stem}.txt"
        if not label_file.exists():
            raise ValueError(f"missing label file {label_file}")
        w = WL.WeakLabelSet.load(label_file)
        w.check(scene.cloud)
        weak.append(w)
    val = _load_scenes(cfg.paths.val_scenes, tc.k) if cfg.paths.val_scenes else []
    C = max(s.cloud.num_classes for s in scenes)
    init = _load_init(args.init, C, tc.seed) if args.init else None
    params, hist = train_weak(scenes, weak, init, tc, val)
    M.save_checkpoint(params, args.out)
    if args.history:
        hist.to_csv(args.history)
    return 0


def _segmentation_embeddings(params, cloud):
    scene = PreparedScene(cloud)
    z, probs = M.predict(params, scene.seg_features, scene.index, M.SEG)
    return z, probs


def cmd_propagate(args):
    cfg = parse_config(args.config)
    params = M.load_checkpoint(args.ckpt)
    cloud = load_ply(args.scene)
    weak = WL.WeakLabelSet.load(args.labels)
    weak.check(cloud)
    labels = WL.apply(cloud, weak)
    z, _ = _segmentation_embeddings(params, cloud)
    lab_idx = weak.labeled_indices
    unl_idx = np.flatnonzero(labels == -1)
    pseudo = propagate(z[lab_idx], labels[lab_idx], z[unl_idx], params.num_classes, cfg.propagation)
    pseudo.save(args.out, index_map=unl_idx)
    log.info("%d pseudo-labelled points", len(pseudo))
    return 0


def cmd_predict(args):
    params = M.load_checkpoint(args.ckpt)
    cloud = load_ply(args.scene)
    scene = PreparedScene(cloud)
    pred = evaluate(params, scene)
    save_ply(PointCloud(cloud.positions, cloud.colors, pred, params.num_classes), args.out)
    return 0


def cmd_eval(args):
    pred = load_ply(args.pred)
    gt = load_ply(args.gt)
    if pred.labels is None or gt.labels is None:
        raise ValueError("both clouds need a label column")
    C = max(pred.num_classes or 0, gt.num_classes or 0,
            int(max(pred.labels.max(), gt.labels.max())) + 1)
    rep = report(pred.labels, gt.labels, C)
    if args.out:
        write_report(rep, args.out)
    print(f"mIoU {rep['miou']:.4f}  OA {rep['oa']:.4f}")
    return 0


def cmd_colorize(args):
    params = M.load_checkpoint(args.ckpt)
    cloud = load_ply(args.scene)
    feats, _ = split_pretext_channels(cloud)
    _, pred = M.predict(params, feats, build_index(cloud.positions), M.PRETEXT)
    colors = recombine(feats[:, 3], pred[:, :2])
    save_ply(PointCloud(cloud.positions, colors, cloud.labels, cloud.num_classes), args.out)
    return 0


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_propagation(n, c, d, repeats=3, seed=0, dense_sizes=None):
    """Rows of (method, N, seconds or None when refused)."""
    rng = np.random.default_rng(seed)
    m = max(c, n // 1000)
    rows = []

    def data(size):
        z_l = rng.normal(size=(m, d))
        y = np.arange(m) % c
        return z_l, y, rng.normal(size=(size, d))

    z_l, y, z_u = data(n)
    rows.append(("sparse", n, _median_time(lambda: propagate(z_l, y, z_u, c), repeats)))
    if dense_sizes is None:
        dense_sizes = sorted({min(n, 2000), min(n, 4000)})
    for size in dense_sizes:
        z_l, y, z_u = data(size)
        rows.append(("sparse", size, _median_time(lambda: propagate(z_l, y, z_u, c), repeats)))
        rows.append(("dense", size, _median_time(
            lambda: dense_graph_propagate(z_l, y, z_u, c), 1)))
    if n + m > DENSE_MAX_POINTS:
        rows.append(("dense", n, None))
    return rows


def cmd_bench_propagation(args):
    rows = bench_propagation(args.n, args.c, args.d, args.repeats, _seed(0))
    print(f"{'method':<8} {'N':>9} {'seconds':>10}")
    for method, size, secs in rows:
        shown = f"{secs:10.4f}" if secs is not None else f"refused (N > {DENSE_MAX_POINTS})"
        print(f"{method:<8} {size:>9} {shown}")
    return 0


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="wsseg", description="Weakly supervised point cloud segmentation toolkit.")
    p.add_argument("-q", "--quiet", action="store_true", help="only print warnings")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-scenes", help="generate synthetic labelled scenes")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_scenes)

    s = sub.add_parser("pretrain", help="colorization pretraining")
    s.add_argument("--config")
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("weak-label", help="sample a weak annotation")
    s.add_argument("--scheme", choices=("1pt", "fraction", "spt"), required=True)
    s.add_argument("--fraction", type=float)
    s.add_argument("--regions", type=int)
    s.add_argument("--radius", type=float, default=WL.DEFAULT_SPT_RADIUS)
    s.add_argument("--scene", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_weak_label)

    s = sub.add_parser("train", help="weakly supervised training")
    s.add_argument("--config")
    s.add_argument("--scenes", required=True)
    s.add_argument("--labels", required=True, help="directory of <scene>.txt label files")
    s.add_argument("--init", help="pretext or segmentation checkpoint")
    s.add_argument("--no-propagation", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--history")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("propagate", help="write pseudo labels for one scene")
    s.add_argument("--config")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_propagate)

    s = sub.add_parser("predict", help="label a scene with a segmentation checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="mIoU / OA report")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("colorize", help="predict colors from a gray copy of a scene")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_colorize)

    s = sub.add_parser("bench-propagation", help="time sparse vs dense propagation")
    s.add_argument("--n", type=int, default=100000)
    s.add_argument("--c", type=int, default=8)
    s.add_argument("--d", type=int, default=16)
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(func=cmd_bench_propagation)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, PLYError, M.ShapeError, ValueError, FileNotFoundError) as exc:
        print(f"wsseg {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report, do not trace
        print(f"wsseg {args.command}: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
