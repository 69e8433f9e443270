"""Loss x head x batch-size grid, scored by test R-AED."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from msce import net
from msce.loss import LossConfig, LossKind
from msce.synth import Sample
from msce.tensor import PoolKind, ReduceKind
from msce.trainer import RunRecord, TrainConfig, train

# Desk-scale optimizer budget. lr0 = 0.01 makes max/sum heads on a freshly
# initialized backbone diverge within a few steps, so every cell shares a
# smaller rate.
DESK_LR = 1e-4
DESK_EPOCHS = 150
DESK_PATIENCE = 100

HEADS = {
    "Ave/mean": (PoolKind.AVERAGE, ReduceKind.MEAN),
    "Max/sum": (PoolKind.MAX, ReduceKind.SUM),
}
LOSS_NAMES = {
    LossKind.MSE_SIGMOID: "Mean squared error (baseline)",
    LossKind.SCE: "Softmax cross entropy",
    LossKind.MSCE: "Multiscale softmax cross entropy",
}


@dataclass(frozen=True)
class Cell:
    index: int
    loss: LossKind
    network: str
    batch_size: int
    group: int


def grid() -> list[Cell]:
    cells = []
    for group, (network, batch) in enumerate([("Ave/mean", 8), ("Max/sum", 16), ("Max/sum", 8)]):
        for kind in (LossKind.MSE_SIGMOID, LossKind.SCE, LossKind.MSCE):
            cells.append(Cell(len(cells), kind, network, batch, group))
    return cells


def cell_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def configure(cell: Cell, base: TrainConfig, size: int, widths, msce_scales: int | None = None,
              seed: int = 0) -> tuple[net.NetConfig, TrainConfig]:
    pool, red = HEADS[cell.network]
    scales = 1
    if cell.loss is LossKind.MSCE:
        scales = msce_scales or size.bit_length() - 1
    net_cfg = net.NetConfig(input_size=size, widths=widths, pool=pool, reduce=red, scales=scales)
    cfg = replace(base, loss=LossConfig(cell.loss, scales, pool=pool), batch_size=cell.batch_size,
                  seed=cell_seed(seed, cell.index))
    return net_cfg, cfg


@dataclass
class CellResult:
    cell: Cell
    raed: list[float] = field(default_factory=list)
    records: list[RunRecord] = field(default_factory=list)
    best: bool = False

    @property
    def mean_raed(self) -> float:
        return float(np.mean(self.raed))


def _run_one(args):
    cell, base, size, widths, msce_scales, seed, train_set, test_set = args
    net_cfg, cfg = configure(cell, base, size, widths, msce_scales, seed)
    _, record = train(train_set, net_cfg, cfg, test=test_set)
    return record


def run_grid(train_set: list[Sample], test_set: list[Sample], base: TrainConfig,
             seeds=(0,), widths=(8, 16, 32), msce_scales: int | None = None,
             cells: list[Cell] | None = None, threads: int | None = None) -> list[CellResult]:
    """Train every (cell, seed) pair and score it on ``test_set``.

    Work items are independent and seeded by (seed, cell index); results are
    collected in grid order regardless of ``threads``.
    """
    size = train_set[0].image.shape[-1]
    cells = grid() if cells is None else cells
    jobs = [(c, base, size, tuple(widths), msce_scales, s, train_set, test_set) for c in cells for s in seeds]
    threads = threads or int(os.environ.get("MSCE_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    results = {c.index: CellResult(c) for c in cells}
    for (c, *_), rec in zip(jobs, records):
        results[c.index].raed.append(rec.test_raed)
        results[c.index].records.append(rec)
    out = [results[c.index] for c in cells]
    for group in {r.cell.group for r in out}:
        members = [r for r in out if r.cell.group == group]
        max(members, key=lambda r: r.mean_raed).best = True
    return out


def to_rows(results: list[CellResult]) -> list[dict]:
    return [{
        "loss": LOSS_NAMES[r.cell.loss],
        "network": r.cell.network,
        "batch_size": r.cell.batch_size,
        "r_aed": r.mean_raed,
        "r_aed_per_seed": " ".join(f"{v:.4f}" for v in r.raed),
        "best_in_group": r.best,
    } for r in results]


def write_csv(results: list[CellResult], path) -> None:
    rows = to_rows(results)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def markdown(results: list[CellResult]) -> str:
    lines = ["| Loss | Network | Batch Size | R-AED (↑) |", "|---|---|---|---|"]
    for row in to_rows(results):
        val = f"{row['r_aed']:.2f}"
        if row["best_in_group"]:
            val = f"**{val}**"
        lines.append(f"| {row['loss']} | {row['network']} | {row['batch_size']} | {val} |")
    return "\n".join(lines) + "\n"
