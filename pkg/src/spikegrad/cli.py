"""Command line interface: train, eval, bench, gen-data."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .datasets import generate_delayed_xor, write_spike_dataset, yinyang_samples
from .training import (
    TrainConfig,
    aggregate_reports,
    bench,
    build_network,
    evaluate,
    load_checkpoint,
    load_splits,
    train,
    write_bench_csv,
)


def _load_config(args):
    cfg = TrainConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.workers is not None:
        cfg.workers = args.workers
    if getattr(args, "dump_trajectories", False):
        cfg.dump_trajectories = True
    return cfg


def _add_common(p):
    p.add_argument("--config", required=True, help="JSON config file (TrainConfig)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--dump-trajectories", action="store_true")


def cmd_train(args):
    cfg = _load_config(args)
    summary = train(cfg)
    print(
        f"best epoch {summary['best_epoch']}: "
        f"val {100 * summary['val_accuracy']:.2f}%, "
        f"test {100 * summary['test_accuracy']:.2f}%"
    )
    print(f"artifacts in {cfg.out_dir}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    if args.runs:
        summaries = []
        for run_dir in args.runs:
            with open(os.path.join(run_dir, "summary.json")) as f:
                summaries.append(json.load(f))
        report = aggregate_reports(summaries)
        print(report, end="")
        return 0
    if not args.checkpoint:
        raise SystemExit("eval requires --checkpoint (or --runs for aggregation)")
    net, _ = build_network(cfg)
    params = load_checkpoint(
        args.checkpoint, args.manifest or args.checkpoint + ".manifest"
    )
    train_d, val_d, test_d = load_splits(cfg)
    split = {"train": train_d, "val": val_d, "test": test_d}[args.split]
    m = evaluate(net, params, cfg, split)
    print(f"{args.split} accuracy: {100 * m['accuracy']:.2f}%")
    print(
        f"max firing: {m['max_firing']:.2f}  dead neurons: {m['dead_neurons']}  "
        f"fire count: {m['fire_count']:.2f}"
        + (f"  mean ttfs: {m['mean_ttfs']:.2f} ms" if m["mean_ttfs"] is not None else "")
    )
    return 0


def cmd_bench(args):
    cfg = _load_config(args)
    rows = bench(
        cfg,
        batch_sizes=tuple(args.batch_sizes),
        hidden_sizes=tuple(args.hidden_sizes),
        step_sizes=tuple(args.step_sizes),
        n_batches=args.n_batches,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = os.path.join(cfg.out_dir, "bench.csv")
    write_bench_csv(out, rows)
    for r in rows:
        print(
            f"hidden={r['hidden']} h={r['h']} batch={r['batch']} "
            f"{r['mode']}: {r['samples_per_s']:.1f} samples/s"
        )
    print(f"wrote {out}")
    return 0


def cmd_gen_data(args):
    cfg = _load_config(args)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    for i, (name, n) in enumerate(sizes.items()):
        seed = cfg.data_seed + i
        if cfg.dataset == "yinyang":
            samples = yinyang_samples(n, seed, cfg.max_solver_time)
        elif cfg.dataset == "xor":
            samples = generate_delayed_xor(n, cfg.xor_t_max, cfg.xor_sigma, seed)
        else:
            raise SystemExit("gen-data supports the generated datasets (yinyang, xor)")
        path = f"{args.out}.{name}.csv"
        write_spike_dataset(path, samples)
        print(f"wrote {path} ({n} samples)")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="spikegrad",
        description="Event-based neural network training with solver-exact gradients",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network per the config")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or aggregate runs")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint.bin path")
    p.add_argument("--manifest", help="checkpoint.manifest path")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--runs", nargs="*", help="run dirs to aggregate (summary.json)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="throughput benchmark")
    _add_common(p)
    p.add_argument("--batch-sizes", type=int, nargs="+", default=[16, 64])
    p.add_argument("--hidden-sizes", type=int, nargs="+", default=[20])
    p.add_argument("--step-sizes", type=float, nargs="+", default=[0.1, 0.2])
    p.add_argument("--n-batches", type=int, default=50)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gen-data", help="generate and persist a spike dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=cmd_gen_data)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
