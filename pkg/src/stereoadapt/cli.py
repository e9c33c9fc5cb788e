"""Command line front end.

Subcommands cover the full loop: generate synthetic sequences, pretrain a
network, distill proxy labels, adapt online over a sequence (or just
evaluate with adaptation off), and plot run logs.
"""

import argparse
import os
import sys

import numpy as np

from . import confidence, engine, fileio, losses, synthetic
from .classic import BmConfig, SgmConfig
from .errors import StereoAdaptError
from .net import NetConfig, StereoNet


def _add_net_args(p):
    p.add_argument("--levels", type=int, default=6,
                   help="encoder pyramid depth (default 6)")
    p.add_argument("--width-scale", type=float, default=1.0,
                   help="channel width multiplier (default 1.0)")
    p.add_argument("--in-channels", type=int, default=1,
                   help="input channels per view (default 1)")
    p.add_argument("--max-corr-disp", type=int, default=2,
                   help="correlation search radius (default 2)")


def _net_config(args):
    return NetConfig(in_channels=args.in_channels,
                     width_scale=args.width_scale,
                     levels=args.levels,
                     max_corr_disp=args.max_corr_disp)


def _scene_spec(args):
    if args.scene_config:
        cfg = fileio.read_config(args.scene_config)
        return synthetic.scene_spec_from_config(cfg, source=args.scene_config)
    segments = (synthetic.parse_segments(args.segments)
                if args.segments else None)
    kwargs = dict(height=args.height, width=args.width,
                  max_disparity=args.max_disparity)
    if segments is not None:
        kwargs["segments"] = segments
    return synthetic.SceneSpec(**kwargs)


def _add_scene_args(p):
    p.add_argument("--scene-config", default=None,
                   help="key=value file describing the scene")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--max-disparity", type=int, default=24)
    p.add_argument("--segments", default=None,
                   help="frames:domain:brightness:contrast:gamma:noise:blur,"
                        "... schedule")


def _frames_from(args):
    """Frame iterable from --data directories (comma separated)."""
    dirs = [d for d in args.data.split(",") if d]
    if len(dirs) == 1:
        return fileio.SequenceReader(dirs[0])
    return fileio.chain_sequences(dirs)


def cmd_gen_synthetic(args):
    spec = _scene_spec(args)
    frames = synthetic.gen_frames(spec, seed=args.seed)
    meta = {"seed": str(args.seed)}
    fileio.write_sequence(args.out, frames, extra_meta=meta)
    print("wrote %d frames to %s" % (spec.total_frames, args.out))
    return 0


def cmd_pretrain(args):
    cfg = _net_config(args)
    net = StereoNet(cfg, seed=args.net_seed)

    def stream():
        if args.data:
            for _ in range(args.epochs):
                for fr in _frames_from(args):
                    yield fr
        else:
            spec = _scene_spec(args)
            for _ in range(args.epochs):
                for w in range(args.worlds):
                    for fr in synthetic.gen_frames(spec, seed=args.seed + w):
                        yield fr

    losses_seen = []

    def progress(i, value):
        losses_seen.append(value)
        if args.verbose and (i + 1) % 100 == 0:
            print("step %d loss %.5f" % (i + 1, float(np.mean(losses_seen[-100:]))))

    history = engine.pretrain(net, stream(), lr=args.lr,
                              momentum=args.momentum, progress=progress)
    net.save(args.out)
    if history:
        print("pretrained %d steps, loss %.5f -> %.5f, saved %s"
              % (len(history), history[0],
                 float(np.mean(history[-min(50, len(history)):])), args.out))
    else:
        print("no frames seen; saved untrained weights to %s" % args.out)
    return 0


def _filter_config(args):
    return confidence.FilterConfig(mode=args.filter, epsilon=args.epsilon,
                                   tau=args.tau, combine=args.combine)


def cmd_distill(args):
    os.makedirs(args.out, exist_ok=True)
    fcfg = _filter_config(args)
    sgm_cfg = SgmConfig(max_disparity=args.max_disparity)
    bm_cfg = BmConfig(max_disparity=args.max_disparity)
    densities = []
    reports = []
    n = 0
    for fr in _frames_from(args):
        labels, report = confidence.distill(
            fr.left, fr.right, matcher=args.matcher, filter_cfg=fcfg,
            sgm_cfg=sgm_cfg, bm_cfg=bm_cfg, gt=fr.gt, valid=fr.valid)
        path = os.path.join(args.out, "%06d.sparse" % fr.index)
        fileio.write_sparse_labels(path, labels.disp, labels.mask)
        report["frame"] = fr.index
        reports.append(report)
        densities.append(report["density_pct"])
        n += 1
    summary = {
        "frames": n,
        "matcher": args.matcher,
        "filter": args.filter,
        "mean_density_pct": float(np.mean(densities)) if densities else 0.0,
    }
    keys = [k for k in ("raw_d1_all", "filtered_d1_all", "raw_epe",
                        "filtered_epe") if reports and k in reports[0]]
    for k in keys:
        summary["mean_" + k] = float(np.mean([r[k] for r in reports]))
    fileio.write_json(os.path.join(args.out, "report.json"),
                      {"summary": summary, "frames": reports})
    print("distilled %d frames to %s (mean density %.1f%%)"
          % (n, args.out, summary["mean_density_pct"]))
    return 0


def _labels_loader(directory):
    def lookup(frame):
        path = os.path.join(directory, "%06d.sparse" % frame.index)
        disp, mask = fileio.read_sparse_labels(
            path, expected_shape=frame.resolution)
        return confidence.ProxyLabels(disp=disp, mask=mask,
                                      confidence=np.ones_like(disp))
    return lookup


def _engine_config(args, mode):
    return engine.EngineConfig(
        mode=mode, proxy=args.proxy, every=args.every, lr=args.lr,
        momentum=args.momentum, decay=args.decay, gain=args.gain,
        epsilon=args.epsilon, tau=args.tau, combine=args.combine,
        max_disparity=args.max_disparity, seed=args.seed)


def _run_engine(args, mode):
    net = StereoNet.load(args.checkpoint)
    cfg = _engine_config(args, mode)
    labels_for = _labels_loader(args.labels) if args.labels else None
    eng = engine.AdaptEngine(net, cfg, labels_for=labels_for)
    echo = {
        "mode": cfg.mode, "proxy": cfg.proxy, "every": cfg.every,
        "lr": repr(cfg.lr), "momentum": repr(cfg.momentum),
        "decay": repr(cfg.decay), "gain": repr(cfg.gain),
        "epsilon": repr(cfg.epsilon), "tau": repr(cfg.tau),
        "combine": cfg.combine, "max_disparity": cfg.max_disparity,
        "seed": cfg.seed, "checkpoint": args.checkpoint,
    }
    log = None
    if args.log:
        log = engine.RunLog(args.log, config_echo=echo,
                            summary_path=args.summary)
    try:
        records, summary = eng.run(_frames_from(args), log=log)
    finally:
        if log is not None:
            log.close()
    if args.save_checkpoint:
        net.save(args.save_checkpoint)
    print("%s over %d frames: mean epe %.4f, mean d1 %.3f%%, %d updates"
          % (mode, summary["frames"], summary["mean_epe"],
             summary["mean_d1_all"], summary["updates"]))
    return 0


def cmd_adapt(args):
    return _run_engine(args, args.mode)


def cmd_eval(args):
    return _run_engine(args, "none")


def cmd_plot(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    for path in args.log:
        records = engine.read_run_log(path)
        ys = np.asarray([getattr(r, args.metric) for r in records])
        xs = np.asarray([r.frame for r in records])
        if args.smooth > 1:
            k = np.ones(args.smooth) / args.smooth
            ys = np.convolve(ys, k, mode="same")
        label = os.path.basename(path)
        ax.plot(xs, ys, label=label, linewidth=1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel(args.metric)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out)
    print("wrote %s" % args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="stereoadapt",
        description="online-adaptive stereo depth at desk scale")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="render a synthetic sequence")
    _add_scene_args(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synthetic)

    t = sub.add_parser("pretrain", help="supervised pretraining")
    _add_net_args(t)
    _add_scene_args(t)
    t.add_argument("--data", default=None,
                   help="sequence directory (overrides scene flags)")
    t.add_argument("--seed", type=int, default=0, help="first world seed")
    t.add_argument("--worlds", type=int, default=1,
                   help="number of synthetic worlds to cycle")
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--net-seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_pretrain)

    d = sub.add_parser("distill", help="classical matcher + confidence labels")
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--matcher", choices=("sgm", "bm"), default="sgm")
    d.add_argument("--max-disparity", type=int, default=64)
    d.add_argument("--filter", choices=confidence.FILTER_MODES, default="lr")
    d.add_argument("--epsilon", type=float, default=None)
    d.add_argument("--tau", type=float, default=1.0)
    d.add_argument("--combine", choices=confidence.COMBINE_RULES,
                   default="min")
    d.set_defaults(func=cmd_distill)

    def add_engine_args(a):
        a.add_argument("--data", required=True)
        a.add_argument("--checkpoint", required=True)
        a.add_argument("--proxy", choices=engine.PROXIES, default="none")
        a.add_argument("--labels", default=None,
                       help="directory of precomputed sparse labels")
        a.add_argument("--every", type=int, default=1)
        a.add_argument("--lr", type=float, default=1e-4)
        a.add_argument("--momentum", type=float, default=0.9)
        a.add_argument("--decay", type=float, default=0.99)
        a.add_argument("--gain", type=float, default=0.01)
        a.add_argument("--epsilon", type=float, default=None)
        a.add_argument("--tau", type=float, default=1.0)
        a.add_argument("--combine", choices=confidence.COMBINE_RULES,
                       default="min")
        a.add_argument("--max-disparity", type=int, default=64)
        a.add_argument("--seed", type=int, default=0)
        a.add_argument("--log", default=None, help="CSV run log path")
        a.add_argument("--summary", default=None, help="JSON summary path")
        a.add_argument("--save-checkpoint", default=None)

    a = sub.add_parser("adapt", help="online adaptation over a sequence")
    a.add_argument("--mode", choices=engine.MODES, required=True)
    add_engine_args(a)
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("eval", help="run with adaptation off")
    add_engine_args(e)
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="plot run log metrics")
    pl.add_argument("--log", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--metric", default="epe",
                    choices=("epe", "d1_all", "photo_err", "loss", "ms"))
    pl.add_argument("--smooth", type=int, default=1)
    pl.set_defaults(func=cmd_plot)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StereoAdaptError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


def entry():
    return main()


if __name__ == "__main__":
    sys.exit(main())
