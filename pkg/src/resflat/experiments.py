"""Grid sweeps over architectures, JSON-lines records and summaries.

Records are appended one JSON object per line as cells finish, so an
interrupted sweep resumes by skipping every cell already on disk.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .data import channels_for, data_root, load_dataset
from .model import ArchitectureSpec, overdetermination_ratio, parameter_count
from .train import EpochMetrics, TrainConfig, train

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("dataset", "variant", "H", "F", "k", "activation", "lr", "P", "Q",
               "final_train_loss", "final_val_loss", "final_train_acc", "final_val_acc")
Q_INTERVALS = ((0.0, 1.0), (1.0, 3.0), (3.0, 10.0), (10.0, float("inf")))


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ExperimentRecord:
    spec: ArchitectureSpec
    config: TrainConfig
    dataset: str
    subset: int | None
    val_subset: int | None
    train_examples: int
    val_examples: int
    parameter_count: int
    q: float
    metrics: tuple[EpochMetrics, ...]
    wall_seconds: float = 0.0

    @property
    def key(self) -> str:
        return cell_key(self.spec, self.config, self.dataset, self.subset, self.val_subset)

    @property
    def final(self) -> EpochMetrics:
        if not self.metrics:
            raise ValueError(f"record {self.key} has no epochs")
        return self.metrics[-1]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "config": self.config.to_dict(),
            "dataset": self.dataset,
            "subset": self.subset,
            "val_subset": self.val_subset,
            "train_examples": self.train_examples,
            "val_examples": self.val_examples,
            "parameter_count": self.parameter_count,
            "q": self.q,
            "metrics": [m.to_dict() for m in self.metrics],
            "wall_seconds": self.wall_seconds,
        }

    def to_json(self) -> str:
        return _dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict, check: bool = True) -> ExperimentRecord:
        rec = cls(
            spec=ArchitectureSpec.from_dict(d["spec"]),
            config=TrainConfig(**d["config"]),
            dataset=d["dataset"],
            subset=d["subset"],
            val_subset=d["val_subset"],
            train_examples=d["train_examples"],
            val_examples=d["val_examples"],
            parameter_count=d["parameter_count"],
            q=d["q"],
            metrics=tuple(EpochMetrics(**m) for m in d["metrics"]),
            wall_seconds=d.get("wall_seconds", 0.0),
        )
        if check:
            rec.check_consistency()
        return rec

    @classmethod
    def from_json(cls, line: str, check: bool = True) -> ExperimentRecord:
        return cls.from_dict(json.loads(line), check)

    def check_consistency(self):
        """Stored P and Q must match a fresh computation from the stored spec."""
        p = parameter_count(self.spec)
        q = overdetermination_ratio(self.train_examples, self.spec.num_classes, p)
        if p != self.parameter_count or q != self.q:
            raise ValueError(f"record {self.key}: stored P={self.parameter_count}, Q={self.q} "
                             f"but spec gives P={p}, Q={q}")

    def deterministic_part(self) -> dict:
        """Everything except the wall-clock time."""
        d = self.to_dict()
        del d["wall_seconds"]
        return d

    def csv_row(self) -> dict:
        f = self.final
        s = self.spec
        return dict(zip(CSV_COLUMNS, (
            self.dataset, s.variant, s.depth, s.filters, s.kernel, s.activation,
            self.config.learning_rate, self.parameter_count, self.q,
            f.train_loss, f.val_loss, f.train_accuracy, f.val_accuracy)))


def cell_key(spec: ArchitectureSpec, config: TrainConfig, dataset: str,
             subset: int | None, val_subset: int | None) -> str:
    return _dumps({"spec": spec.to_dict(), "config": config.to_dict(), "dataset": dataset,
                   "subset": subset, "val_subset": val_subset})


@dataclass(frozen=True)
class GridSpec:
    """Cartesian sweep definition.

    Cells are enumerated in lexicographic order of
    (depth, filters, kernel, activation, learning_rate, variant), following
    the order of values within each axis. With ``product`` set, only cells
    with ``depth * filters == product`` are kept (the fixed-budget
    depth/width trade-off).
    """

    dataset: str = "mnist"
    depths: tuple[int, ...] = (1,)
    filters: tuple[int, ...] = (1,)
    kernels: tuple[int, ...] = (16,)
    activations: tuple[str, ...] = ("relu",)
    variants: tuple[str, ...] = ("sequential", "parallel")
    learning_rates: tuple[float, ...] = (1e-4,)
    subset: int | None = 1000
    val_subset: int | None = 1000
    epochs: int = 1
    batch_size: int = 512
    base_seed: int = 0
    product: int | None = None

    def __post_init__(self):
        for name in ("depths", "filters", "kernels", "activations", "variants", "learning_rates"):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
            if not value:
                raise ValueError(f"grid axis {name!r} is empty")
        if self.dataset not in ("mnist", "cifar10"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.product is not None and not self.cells():
            raise ValueError(f"no (depth, filters) pair has product {self.product}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GridSpec:
        return cls(**d)

    def cells(self) -> list[tuple[ArchitectureSpec, TrainConfig]]:
        out = []
        for H, F, k, act, lr, variant in itertools.product(
                self.depths, self.filters, self.kernels, self.activations,
                self.learning_rates, self.variants):
            if self.product is not None and H * F != self.product:
                continue
            spec = ArchitectureSpec(input_channels=channels_for(self.dataset), depth=H, filters=F,
                                    kernel=k, activation=act, variant=variant, base_seed=self.base_seed)
            cfg = TrainConfig(learning_rate=lr, epochs=self.epochs, batch_size=self.batch_size)
            out.append((spec, cfg))
        return out


@lru_cache(maxsize=4)
def _cached_dataset(name: str, split: str, root: str, limit: int | None):
    return load_dataset(name, split, root, limit)


def run_cell(spec: ArchitectureSpec, config: TrainConfig, dataset: str, root: str,
             subset: int | None, val_subset: int | None) -> ExperimentRecord:
    tr = _cached_dataset(dataset, "train", str(root), subset)
    va = _cached_dataset(dataset, "validation", str(root), val_subset)
    t0 = time.perf_counter()
    metrics = train(spec, tr, va, config)
    p = parameter_count(spec)
    return ExperimentRecord(spec, config, dataset, subset, val_subset, len(tr), len(va), p,
                            overdetermination_ratio(len(tr), spec.num_classes, p),
                            tuple(metrics), time.perf_counter() - t0)


def read_records(path, check: bool = True) -> list[ExperimentRecord]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open() as f:
        return [ExperimentRecord.from_json(line, check) for line in f if line.strip()]


def _append(path: Path, rec: ExperimentRecord):
    with path.open("a") as f:
        f.write(rec.to_json() + "\n")
        f.flush()
        os.fsync(f.fileno())


def run_grid(grid: GridSpec, output_path, data_dir=None, workers: int | None = None) -> list[ExperimentRecord]:
    """Run every grid cell not already in ``output_path`` and return all records.

    Records are appended by this process only, in completion order; the
    returned list (and the CSV summary written next to the JSONL file) is
    in grid order. Each cell is deterministic, so results do not depend on
    ``workers``.
    """
    root = str(data_root(data_dir))
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    existing = {r.key: r for r in read_records(output_path)}
    cells = grid.cells()
    keys = [cell_key(s, c, grid.dataset, grid.subset, grid.val_subset) for s, c in cells]
    todo = [cell for cell, key in zip(cells, keys) if key not in existing]
    logger.info("%d cells, %d already done", len(cells), len(cells) - len(todo))
    output_path.touch()
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(todo) <= 1:
        for spec, cfg in todo:
            rec = run_cell(spec, cfg, grid.dataset, root, grid.subset, grid.val_subset)
            _append(output_path, rec)
            existing[rec.key] = rec
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, s, c, grid.dataset, root, grid.subset, grid.val_subset)
                       for s, c in todo]
            for fut in as_completed(futures):
                rec = fut.result()
                _append(output_path, rec)
                existing[rec.key] = rec
    ordered = [existing[key] for key in keys]
    write_csv(ordered, output_path.with_suffix(".csv"))
    return ordered


def write_csv(records, path):
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for rec in records:
            if rec.metrics:
                w.writerow(rec.csv_row())


def params_table(dataset: str, depth: int, kernel: int, filter_list, examples: int | None = None):
    """Rows ``(F, P, Q)`` for the full training set of ``dataset`` (or ``examples``)."""
    K = examples if examples is not None else {"mnist": 60_000, "cifar10": 50_000}[dataset]
    rows = []
    for F in filter_list:
        spec = ArchitectureSpec(input_channels=channels_for(dataset), depth=depth, filters=F, kernel=kernel)
        P = parameter_count(spec)
        rows.append((F, P, overdetermination_ratio(K, spec.num_classes, P)))
    return rows


def q_interval(q: float) -> tuple[float, float]:
    for lo, hi in Q_INTERVALS:
        if lo <= q < hi:
            return lo, hi
    raise ValueError(f"Q={q} outside all intervals")


def q_interval_summary(records) -> list[dict]:
    """Mean final losses per (Q interval, variant) over the given records."""
    groups: dict[tuple, list] = {}
    for rec in records:
        if rec.metrics:
            groups.setdefault((q_interval(rec.q), rec.spec.variant), []).append(rec.final)
    rows = []
    for (interval, variant), finals in sorted(groups.items()):
        rows.append({
            "q_interval": interval, "variant": variant, "runs": len(finals),
            "mean_train_loss": float(np.mean([f.train_loss for f in finals])),
            "mean_val_loss": float(np.mean([f.val_loss for f in finals])),
        })
    return rows
