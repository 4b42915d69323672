"""Command-line entry point: ``resflat {data,verify,params,train,grid,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .experiments import (
    GridSpec,
    params_table,
    q_interval_summary,
    read_records,
    run_cell,
    run_grid,
    write_csv,
)
from .model import ArchitectureSpec
from .plot import SELECTORS, emit_plot
from .train import TrainConfig
from .verify import format_report, run_checks


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _strs(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


def _subset(s: str) -> int | None:
    return None if s.lower() in ("all", "none", "full") else int(s)


def cmd_data_inspect(args) -> int:
    ds = data_mod.load_dataset(args.dataset, args.split, args.data_dir, args.subset)
    counts, std = data_mod.class_histogram(ds.labels)
    plan = data_mod.batches(len(ds), args.batch_size)
    start, stop = plan.ranges[0] if len(plan) else (0, 0)
    print(f"dataset      {ds.name} ({ds.split})")
    print(f"examples     {len(ds)}")
    print(f"shape        {tuple(ds.images.shape)}")
    print(f"pixel range  [{ds.images.min():.4f}, {ds.images.max():.4f}]")
    print("histogram    " + " ".join(f"{c}:{n}" for c, n in enumerate(counts)))
    print(f"count std    {std:.4f}")
    if len(plan):
        last = plan.ranges[-1][1] - plan.ranges[-1][0]
        print(f"batches      {len(plan)} of up to {args.batch_size} (last has {last})")
    print(f"first batch  sha256 {data_mod.checksum(ds, start, stop)}")
    return 0


def cmd_verify(args) -> int:
    results = run_checks(args.level)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_params(args) -> int:
    rows = params_table(args.dataset, args.depth, args.kernel, args.filters, args.examples)
    print(f"{'F':>4} {'P':>12} {'Q':>10}")
    for F, P, Q in rows:
        print(f"{F:>4} {P:>12,} {Q:>10.3f}")
    return 0


def cmd_train(args) -> int:
    spec = ArchitectureSpec(
        input_channels=data_mod.channels_for(args.dataset), depth=args.depth, filters=args.filters,
        kernel=args.kernel, activation=args.activation, variant=args.variant, base_seed=args.base_seed)
    cfg = TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs, batch_size=args.batch_size,
                      rmsprop_decay=args.rmsprop_decay, rmsprop_epsilon=args.rmsprop_epsilon)
    root = str(data_mod.data_root(args.data_dir))
    rec = run_cell(spec, cfg, args.dataset, root, args.subset, args.val_subset)
    for m in rec.metrics:
        print(f"epoch {m.epoch:3d}  train {m.train_loss:.4f} ({m.train_accuracy:.3f})  "
              f"val {m.val_loss:.4f} ({m.val_accuracy:.3f})")
    print(f"P={rec.parameter_count}  Q={rec.q:.3f}  {rec.wall_seconds:.1f}s")
    if args.output:
        out = Path(args.output)
        with out.open("a") as f:
            f.write(rec.to_json() + "\n")
        write_csv(read_records(out), out.with_suffix(".csv"))
    return 0


def _grid_from_args(args) -> GridSpec:
    if args.config:
        base = json.loads(Path(args.config).read_text())
    else:
        base = {}
    overrides = {
        "dataset": args.dataset, "depths": args.depths, "filters": args.filters,
        "kernels": args.kernels, "activations": args.activations, "variants": args.variants,
        "learning_rates": args.learning_rates, "epochs": args.epochs, "batch_size": args.batch_size,
        "base_seed": args.base_seed, "product": args.product,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.subset is not None:
        base["subset"] = _subset(args.subset)
    if args.val_subset is not None:
        base["val_subset"] = _subset(args.val_subset)
    return GridSpec.from_dict(base)


def cmd_grid(args) -> int:
    grid = _grid_from_args(args)
    if args.dry_run:
        for spec, cfg in grid.cells():
            print(json.dumps({"spec": spec.to_dict(), "learning_rate": cfg.learning_rate}))
        return 0
    records = run_grid(grid, args.output, args.data_dir, args.workers)
    print(f"{len(records)} records in {args.output}")
    for row in q_interval_summary(records):
        lo, hi = row["q_interval"]
        print(f"Q in [{lo:g}, {hi:g})  {row['variant']:<10}  runs {row['runs']:3d}  "
              f"train {row['mean_train_loss']:.4f}  val {row['mean_val_loss']:.4f}")
    return 0


def cmd_plot(args) -> int:
    records = read_records(args.records)
    if args.dataset:
        records = [r for r in records if r.dataset == args.dataset]
    for attr, value in (("depth", args.depth), ("filters", args.filters), ("kernel", args.kernel)):
        if value is not None:
            records = [r for r in records if getattr(r.spec, attr) == value]
    if args.learning_rate is not None:
        records = [r for r in records if r.config.learning_rate == args.learning_rate]
    out = emit_plot(records, args.selector, args.output)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resflat", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
        sp.add_argument("--data-dir", default=None,
                        help=f"dataset root (default: ${data_mod.DATA_DIR_ENV})")

    d = sub.add_parser("data", help="dataset utilities")
    dsub = d.add_subparsers(dest="data_command", required=True)
    insp = dsub.add_parser("inspect", help="counts, class histogram and first-batch checksum")
    data_args(insp)
    insp.add_argument("--split", choices=("train", "validation"), default="train")
    insp.add_argument("--subset", type=int, default=None)
    insp.add_argument("--batch-size", type=int, default=512)
    insp.set_defaults(func=cmd_data_inspect)

    v = sub.add_parser("verify", help="run the numerical self-checks")
    v.add_argument("--level", choices=("quick", "full"), default="quick")
    v.set_defaults(func=cmd_verify)

    pr = sub.add_parser("params", help="parameter counts and overdetermination ratios")
    pr.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    pr.add_argument("--depth", type=int, default=16)
    pr.add_argument("--kernel", type=int, default=16)
    pr.add_argument("--filters", type=_ints, default=[1, 2, 4, 8, 16, 32])
    pr.add_argument("--examples", type=int, default=None, help="override K (default: full training set)")
    pr.set_defaults(func=cmd_params)

    t = sub.add_parser("train", help="train one architecture")
    data_args(t)
    t.add_argument("--depth", type=int, default=1)
    t.add_argument("--filters", type=int, default=1)
    t.add_argument("--kernel", type=int, default=16)
    t.add_argument("--activation", choices=("relu", "sigmoid"), default="relu")
    t.add_argument("--variant", choices=("sequential", "parallel"), default="sequential")
    t.add_argument("--base-seed", type=int, default=0)
    t.add_argument("--learning-rate", type=float, default=1e-4)
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--batch-size", type=int, default=512)
    t.add_argument("--rmsprop-decay", type=float, default=0.9)
    t.add_argument("--rmsprop-epsilon", type=float, default=1e-7)
    t.add_argument("--subset", type=_subset, default=1000)
    t.add_argument("--val-subset", type=_subset, default=1000)
    t.add_argument("--output", default=None, help="append the record to this JSONL file")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("grid", help="run a sweep, resuming from existing records")
    data_args(g)
    g.set_defaults(dataset=None)
    g.add_argument("--config", default=None, help="JSON file with GridSpec fields")
    g.add_argument("--depths", type=_ints)
    g.add_argument("--filters", type=_ints)
    g.add_argument("--kernels", type=_ints)
    g.add_argument("--activations", type=_strs)
    g.add_argument("--variants", type=_strs)
    g.add_argument("--learning-rates", type=_floats)
    g.add_argument("--subset", default=None)
    g.add_argument("--val-subset", default=None)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--base-seed", type=int)
    g.add_argument("--product", type=int, help="keep only cells with depth * filters == PRODUCT")
    g.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
    g.add_argument("--output", default="results/records.jsonl")
    g.add_argument("--dry-run", action="store_true", help="list the cells and exit")
    g.set_defaults(func=cmd_grid)

    pl = sub.add_parser("plot", help="SVG chart of final losses")
    pl.add_argument("--records", required=True)
    pl.add_argument("--selector", choices=sorted(SELECTORS), default="loss_vs_depth")
    pl.add_argument("--output", required=True)
    pl.add_argument("--dataset", default=None)
    pl.add_argument("--depth", type=int, default=None)
    pl.add_argument("--filters", type=int, default=None)
    pl.add_argument("--kernel", type=int, default=None)
    pl.add_argument("--learning-rate", type=float, default=None)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
