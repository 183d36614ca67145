"""Command-line entry point.

Subcommands: synth (dataset generation), train, eval, infer, viz
(flow color rendering / guidance channel dumps), gradcheck. Exit codes:
0 ok, 1 usage error, 2 verification failure, 3 runtime error. The
EVFLOW_THREADS environment variable caps eval parallelism (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ModelConfig, RunConfig
from .events import load_events
from .flowio import flow_to_color, read_flo, write_flo, write_pgm, write_ppm
from .metrics import (aggregate_reports, evaluate_flow, psnr, report_csv,
                      report_table, ssim, warp_backward)
from .model import FlowModel
from .synth import SynthConfig, gen_dataset, load_dataset, read_meta
from .tensor import no_grad
from .train import train

USAGE_EXIT = 1
VERIFY_EXIT = 2
RUNTIME_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(USAGE_EXIT)


def _build_parser():
    parser = _Parser(prog="evflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32, help="square sensor size")
    p.add_argument("--motion", default="translation",
                   choices=["translation", "rotation", "affine", "mixed"])
    p.add_argument("--out", required=True)
    p.add_argument("--max-disp", type=float, default=5.0)
    p.add_argument("--contrast", type=float, default=0.15)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--intensity-lo", type=float, default=30.0)
    p.add_argument("--intensity-hi", type=float, default=225.0)
    p.add_argument("--n-targets", type=int, default=5,
                   help="segment count the event coverage is generated for")
    p.add_argument("--format", default="csv", choices=["csv", "binary"])

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-data")
    for key in ("seed", "steps", "batch", "iters", "n_targets"):
        p.add_argument(f"--{key.replace('_', '-')}", type=int)
    for key in ("lr", "momentum", "gamma"):
        p.add_argument(f"--{key}", type=float)
    p.add_argument("--fusion", choices=["guided", "concat"])
    p.add_argument("--context", choices=["st", "frame", "event"])
    p.add_argument("--guidance", choices=["ice", "frame"])

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", help="write per-sample CSV here")
    p.add_argument("--config", help="config file (default: next to checkpoint)")
    p.add_argument("--outlier-mode", default="or", choices=["or", "and"])

    p = sub.add_parser("infer", help="predict flow for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--image0", required=True)
    p.add_argument("--image1", required=True)
    p.add_argument("--out-flow", required=True)
    p.add_argument("--meta", help="metadata file (default: meta.txt next to events)")
    p.add_argument("--config", help="config file (default: next to checkpoint)")

    p = sub.add_parser("viz", help="render a flow file or dump guidance channels")
    p.add_argument("--flow")
    p.add_argument("--out-image")
    p.add_argument("--ice-sample", help="sample dir: dump guidance channels as PGM")
    p.add_argument("--out-prefix", help="prefix for guidance channel PGMs")

    p = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p.add_argument("--scale", default="tiny", choices=["tiny", "small"])
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) \
        else RunConfig()
    overrides = {
        "seed": args.seed, "steps": args.steps, "batch": args.batch,
        "iters": args.iters, "n_targets": args.n_targets, "lr": args.lr,
        "momentum": args.momentum, "gamma": args.gamma, "fusion": args.fusion,
        "context": args.context, "guidance": args.guidance,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg.set_key(key, str(value))
    cfg.model.validate()
    return cfg


def _model_config_for_checkpoint(args) -> ModelConfig:
    path = args.config
    if path is None:
        candidate = os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                                 "config.txt")
        path = candidate if os.path.exists(candidate) else None
    return RunConfig.from_file(path).model if path else ModelConfig()


def _prepare_set(model, samples):
    return [{"name": s["name"],
             "inputs": model.prepare_inputs(s["image0"], s["image1"], s["events"],
                                            s["t_k"], s["t_k1"]),
             "flow_gt": s["flow_gt"], "valid": s["valid"],
             "image0": s["image0"], "image1": s["image1"]}
            for s in samples]


def cmd_synth(args):
    cfg = SynthConfig(height=args.size, width=args.size, motion=args.motion,
                      max_disp=args.max_disp, contrast=args.contrast,
                      noise_rate=args.noise_rate, intensity_lo=args.intensity_lo,
                      intensity_hi=args.intensity_hi, n_targets=args.n_targets,
                      event_format=args.format)
    names = gen_dataset(args.seed, args.count, args.out, cfg)
    print(f"wrote {len(names)} samples to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_run_config(args)
    model = FlowModel(cfg.model, seed=cfg.seed, dtype=np.float32)
    samples = _prepare_set(model, load_dataset(args.data))
    val = _prepare_set(model, load_dataset(args.val_data)) if args.val_data else None
    os.makedirs(args.out, exist_ok=True)
    cfg.data, cfg.val_data, cfg.out = args.data, args.val_data or "", args.out
    cfg.to_file(os.path.join(args.out, "config.txt"))
    history = train(model, samples, cfg, out_dir=args.out, val_samples=val, log=print)
    print(f"final loss {history['losses'][-1]:.4f}; model at {args.out}/model.ckpt")
    return 0


def _eval_one(model, sample, outlier_mode):
    with no_grad():
        pred = model.forward(sample["inputs"])[-1].data
    rep = evaluate_flow(pred, sample["flow_gt"], sample["valid"], outlier_mode)
    warped = warp_backward(sample["image1"], pred)
    rep.ssim = ssim(warped, sample["image0"])
    rep.psnr = psnr(warped, sample["image0"])
    return sample["name"], rep


def cmd_eval(args):
    model = FlowModel(_model_config_for_checkpoint(args), dtype=np.float32)
    model.load(args.checkpoint)
    samples = _prepare_set(model, load_dataset(args.data))
    workers = max(1, int(os.environ.get("EVFLOW_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            with no_grad():
                rows = list(pool.map(
                    lambda s: _eval_one(model, s, args.outlier_mode), samples))
    else:
        rows = [_eval_one(model, s, args.outlier_mode) for s in samples]
    rows.sort(key=lambda r: r[0])
    rows.append(("aggregate", aggregate_reports([rep for _, rep in rows])))
    print(report_table(rows))
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report_csv(rows))
    return 0


def cmd_infer(args):
    model = FlowModel(_model_config_for_checkpoint(args), dtype=np.float32)
    model.load(args.checkpoint)
    meta_path = args.meta or os.path.join(os.path.dirname(os.path.abspath(args.events)),
                                          "meta.txt")
    meta = read_meta(meta_path)
    sensor = (int(meta["height"]), int(meta["width"]))
    fmt = "csv" if args.events.endswith(".csv") else "binary"
    events = load_events(args.events, fmt, sensor)
    # declared coverage comes from the metadata, not the event extremes
    t_k, t_k1 = int(meta["t_k"]), int(meta["t_k1"])
    dt = (t_k1 - t_k) / int(meta.get("n_targets", 5))
    from .events import EventWindow
    events = EventWindow(sensor[0], sensor[1], events.t, events.x, events.y,
                         events.p, t_start=t_k - dt, t_end=t_k1)
    from .flowio import read_pgm
    image0 = read_pgm(args.image0)
    image1 = read_pgm(args.image1)
    inputs = model.prepare_inputs(image0, image1, events, t_k, t_k1)
    with no_grad():
        pred = model.forward(inputs)[-1].data
    write_flo(args.out_flow, pred)
    print(f"wrote {args.out_flow}")
    return 0


def cmd_viz(args):
    did_something = False
    if args.flow:
        if not args.out_image:
            raise ValueError("viz: --flow requires --out-image")
        flow, _ = read_flo(args.flow)
        write_ppm(args.out_image, flow_to_color(flow))
        print(f"wrote {args.out_image}")
        did_something = True
    if args.ice_sample:
        from .synth import load_sample
        from .model import FlowModel as _FM
        sample = load_sample(args.ice_sample)
        model = _FM(ModelConfig())
        inputs = model.prepare_inputs(sample["image0"], sample["image1"],
                                      sample["events"], sample["t_k"], sample["t_k1"])
        prefix = args.out_prefix or os.path.join(args.ice_sample, "ice")
        for idx, channel in enumerate(inputs.guide0):
            write_pgm(f"{prefix}_ch{idx}.pgm", (channel + 1.0) * 127.5)
        print(f"wrote {inputs.guide0.shape[0]} guidance channels to {prefix}_ch*.pgm")
        did_something = True
    if not did_something:
        raise ValueError("viz: nothing to do (pass --flow or --ice-sample)")
    return 0


def cmd_gradcheck(args):
    from .verification import run_suite
    return 0 if run_suite(scale=args.scale) else VERIFY_EXIT


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
                "infer": cmd_infer, "viz": cmd_viz, "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
