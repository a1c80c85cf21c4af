"""``uwenhance`` command line.

Exit codes: 0 success, 1 failed gradient check, 2 configuration or input
error (the message names the offending key path), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, FormatError, NumericError, ShapeError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path):
    from .config import RunConfig, load_run_config

    return load_run_config(path) if path else RunConfig().validate()


def _network_from_checkpoint(path):
    from .config import run_config_from_dict
    from .network import EnhancementNet
    from .training import load_checkpoint, read_checkpoint

    ckpt = read_checkpoint(path)
    if ckpt.config is None:
        raise ConfigError("checkpoint carries no embedded config", "checkpoint")
    cfg = run_config_from_dict(_strip_paths(ckpt.config)).resolved()
    net = EnhancementNet(cfg.network)
    load_checkpoint(path, net)
    return net.eval()


def _strip_paths(doc):
    return {k: v for k, v in doc.items() if k not in ("data_dir", "out_dir")}


def cmd_synth(args):
    from .data import build_dataset, save_dataset

    cfg = _load_config(args.config).resolved()
    out = args.out or cfg.data_dir
    if out is None:
        raise ConfigError("no output directory (pass --out or set data_dir)", "data_dir")
    ds = build_dataset(cfg.data.n_train, cfg.data.n_val, cfg.network.height, cfg.network.width,
                       cfg.degradation, cfg.data.seed)
    save_dataset(ds, out)
    print(f"wrote {len(ds.clean)} pairs to {out} (input PSNR on val {ds.baseline_psnr('val'):.3f} dB)")
    return EXIT_OK


def cmd_train(args):
    from .data import load_dataset
    from .network import EnhancementNet
    from .training import train

    raw = _load_config(args.config)
    cfg = raw.resolved()
    data_dir = args.data or cfg.data_dir
    out_dir = args.out or cfg.out_dir
    if data_dir is None:
        raise ConfigError("no dataset directory (pass --data or set data_dir)", "data_dir")
    if out_dir is None:
        raise ConfigError("no run directory (pass --out or set out_dir)", "out_dir")
    if args.epochs is not None:
        cfg.train.epochs = raw.train.epochs = args.epochs
    ds = load_dataset(data_dir)
    if ds.clean.shape[1:3] != (cfg.network.height, cfg.network.width):
        raise ConfigError(f"dataset images are {ds.clean.shape[1:3]}, network expects "
                          f"{(cfg.network.height, cfg.network.width)}", "network.height")
    os.makedirs(out_dir, exist_ok=True)
    echo = raw.to_dict()
    _write_json(os.path.join(out_dir, "config.json"), echo)
    net = EnhancementNet(cfg.network)
    result = train(net, ds, cfg.train, cfg.loss, out_dir=out_dir, resume=args.resume, config_echo=echo,
                   verbose=not args.quiet)
    st = result.state
    print(f"done: {st.epoch} epochs, best val PSNR {st.best_psnr:.3f} dB at epoch {st.best_epoch}")
    return EXIT_OK


def cmd_enhance(args):
    from .io import read_image, write_image

    net = _network_from_checkpoint(args.checkpoint)
    img = read_image(args.input)
    if img.shape[:2] != (net.cfg.height, net.cfg.width):
        raise ConfigError(f"image is {img.shape[0]}x{img.shape[1]}, checkpoint expects "
                          f"{net.cfg.height}x{net.cfg.width}", "network.height")
    out = net.predict(img.astype(net.dtype))
    write_image(args.output, out)
    return EXIT_OK


def cmd_eval(args):
    from .data import load_dataset
    from .losses import METRIC_COLUMNS, metric_rows, summarize, write_metrics_csv

    ds = load_dataset(args.data)
    idx = {"val": ds.val_idx, "train": ds.train_idx, "all": np.arange(len(ds.clean))}[args.split]
    degraded, clean = ds.degraded[idx], ds.clean[idx]
    if args.checkpoint:
        net = _network_from_checkpoint(args.checkpoint)
        output = net.predict(degraded.astype(net.dtype), batch_size=args.batch_size)
    else:
        output = degraded  # score the inputs themselves
    rows = metric_rows(clean, output, ids=[f"{i:04d}" for i in idx])
    write_metrics_csv(rows, args.report)
    means = summarize(rows)
    print(" ".join(f"{k}={means[k]:.6g}" for k in METRIC_COLUMNS[1:]))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import CHECKS, run_checks

    modules = args.module or list(CHECKS)
    for m in modules:
        if m not in CHECKS:
            raise ConfigError(f"unknown module {m!r}; choose from {sorted(CHECKS)}", "module")
    results = run_checks(modules)
    failed = 0
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name:60s} err={r.error:.3e} tol={r.tol:.0e}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def cmd_bench(args):
    from .bench import BENCH_COLUMNS, doubling_ratios, run_bench, write_bench_csv

    try:
        lengths = [int(v) for v in args.lengths.split(",") if v]
    except ValueError:
        raise ConfigError(f"bad length list {args.lengths!r}", "lengths") from None
    if not lengths or min(lengths) < 1:
        raise ConfigError("lengths must be positive integers", "lengths")
    rows = run_bench(args.op, lengths, C=args.channels, N=args.state_dim, repeats=args.repeats)
    if args.out:
        write_bench_csv(rows, args.out)
    print(",".join(BENCH_COLUMNS))
    for r in rows:
        print(",".join(str(v) for v in r.as_dict().values()))
    for L, ratio in doubling_ratios(rows):
        print(f"# ratio {L}->{2 * L}: {ratio:.3f}", file=sys.stderr)
    return EXIT_OK


PARAM_BRACKET = (2.5e6, 6.0e6)


def cmd_params(args):
    from .network import EnhancementNet, parameter_breakdown, preset

    if args.config:
        cfg = _load_config(args.config).resolved().network
    else:
        cfg = preset(args.preset, block_mode=args.block_mode)
    net = EnhancementNet(cfg)
    total = net.num_parameters()
    print(f"total {total}")
    for name, n in parameter_breakdown(net, args.depth).items():
        print(f"  {name:40s} {n}")
    if args.preset == "full" and not args.config and not PARAM_BRACKET[0] <= total <= PARAM_BRACKET[1]:
        print(f"warning: {total} outside the expected bracket {PARAM_BRACKET}", file=sys.stderr)
    return EXIT_OK


def cmd_preset(args):
    from .config import ABLATIONS, ablation_config

    if args.name is None:
        for name in ABLATIONS:
            print(name)
        return EXIT_OK
    print(json.dumps(ablation_config(args.name, seed=args.seed).to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwenhance", description="Underwater image enhancement toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--epochs", type=int, help="override the configured epoch count")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("enhance", help="enhance one PPM image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.set_defaults(fn=cmd_enhance)

    s = sub.add_parser("eval", help="per-image metrics on a dataset split")
    s.add_argument("--checkpoint", help="omit to score the degraded inputs directly")
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--split", choices=("val", "train", "all"), default="val")
    s.add_argument("--batch-size", type=int, default=8)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--module", action="append", help="suite to run (repeatable); default all")
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("bench", help="time an operator across sequence lengths")
    s.add_argument("--op", choices=("scan", "attention", "swsa"), required=True)
    s.add_argument("--lengths", default="1024,2048,4096,8192")
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--state-dim", type=int, default=16)
    s.add_argument("--repeats", type=int, default=20)
    s.add_argument("--out", help="CSV path (rows are also printed)")
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("params", help="parameter count with a per-module breakdown")
    s.add_argument("--config")
    s.add_argument("--preset", choices=("desk", "full"), default="full")
    s.add_argument("--block-mode", default="parallel")
    s.add_argument("--depth", type=int, default=1)
    s.set_defaults(fn=cmd_params)

    s = sub.add_parser("preset", help="list ablation presets or print one as a config")
    s.add_argument("name", nargs="?")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ShapeError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
