"""Command-line entry point: ``msce <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from msce import ablation, gradcheck, io, net, synth, trainer
from msce.loss import LossConfig, LossKind, landscape
from msce.plot import line_chart_svg
from msce.tensor import PoolKind, ReduceKind, ShapeError

EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _loss_config(kind: str, scales: int | None, pool: str, default_scales: int) -> LossConfig:
    kind = LossKind(kind)
    if scales is None:
        scales = default_scales if kind is LossKind.MSCE else 1
    try:
        return LossConfig(kind, scales, pool=pool)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _log2(n: int) -> int:
    return n.bit_length() - 1


# -- landscape ----------------------------------------------------------------

def cmd_landscape(args) -> int:
    c = args.classes
    if args.loss == "msce" and (c < 2 or c & (c - 1)):
        raise UsageError(f"--classes must be a power of two for msce, got {c}")
    if not 0 <= args.gt < c:
        raise UsageError(f"--gt {args.gt} outside [0, {c})")
    if args.amplitude <= 0:
        raise UsageError("--amplitude must be positive")
    cfg = _loss_config(args.loss, args.scales, args.pool, _log2(max(c, 1)))
    if cfg.kind is LossKind.MSCE and (1 << (cfg.scales - 1)) > c:
        raise UsageError(f"--scales {cfg.scales} too large for {c} classes")
    curve = landscape(cfg, c, args.gt, args.amplitude)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["coordinate", "normalized_loss"])
        for k, v in enumerate(curve):
            w.writerow([k, repr(float(v))])
    label = args.loss.upper() + (f" (M={cfg.scales})" if cfg.kind is LossKind.MSCE else "")
    Path(f"{prefix}.svg").write_text(line_chart_svg(
        range(c), curve, title=f"{label}, ground truth {args.gt} of {c}",
        xlabel="predicted coordinate", ylabel="normalized loss"))
    print(f"wrote {prefix}.csv and {prefix}.svg")
    return 0


# -- gradcheck ----------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    if args.size < 4 or args.size & (args.size - 1):
        raise UsageError(f"--size must be a power of two >= 4, got {args.size}")
    results = gradcheck.run(args.seed, args.seeds, args.size, perturb=args.perturb)
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{r.component:<20} max_rel_err={r.error:.3e} tol={r.tolerance:.0e} "
              f"{'ok' if r.ok else 'FAIL'}")
    if failed:
        print("gradient check failed: " + ", ".join(r.component for r in failed), file=sys.stderr)
        return EXIT_CHECK
    return 0


# -- data / train / eval ------------------------------------------------------

def cmd_gendata(args) -> int:
    try:
        spec = synth.SynthSpec(size=args.size, count=args.count, seed=args.seed,
                               fovea_radius=tuple(args.fovea_radius), disc_radius=tuple(args.disc_radius),
                               noise=args.noise, margin=args.margin, hard=args.hard)
    except ValueError as e:
        raise UsageError(str(e)) from None
    data = synth.generate(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    synth.save(data, args.out, spec)
    print(f"wrote {len(data)} samples ({spec.size}x{spec.size}) to {args.out}")
    return 0


def _widths(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(w) for w in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_train(args) -> int:
    data, _ = synth.load(args.data)
    test = synth.load(args.test)[0] if args.test else None
    size = data[0].image.shape[-1]
    loss = _loss_config(args.loss, args.scales, args.pool, _log2(size))
    try:
        net_cfg = net.NetConfig(input_size=size, widths=args.widths, pool=args.pool,
                                reduce=args.reduce, scales=loss.scales)
        cfg = trainer.TrainConfig(loss=loss, batch_size=args.batch, lr0=args.lr, decay_steps=args.decay_steps,
                                  decay_rate=args.decay_rate, max_epochs=args.epochs, patience=args.patience,
                                  seed=args.seed, val_fraction=args.val_fraction, monitor=args.monitor)
    except ValueError as e:
        raise UsageError(str(e)) from None
    try:
        params, record = trainer.train(data, net_cfg, cfg, test=test)
    except ValueError as e:
        raise UsageError(str(e)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net.save_checkpoint(out / "checkpoint.msck", net_cfg, params, cfg.seed)
    record.write_json(out / "run.json")
    record.write_csv(out / "run.csv")
    (out / "config.json").write_text(json.dumps(
        {"net": net_cfg.to_dict(), "train": cfg.to_dict(), "data": str(args.data)}, indent=2, sort_keys=True) + "\n")
    summary = {"best_epoch": record.best_epoch, "epochs": len(record.epochs), "test_raed": record.test_raed}
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    config, params, _ = net.load_checkpoint(args.checkpoint)
    data, _ = synth.load(args.data)
    if data[0].image.shape != (config.in_channels, config.input_size, config.input_size):
        raise io.SizeMismatchError(f"dataset images {data[0].image.shape} do not fit a "
                                   f"{config.input_size}x{config.input_size} network")
    score, dist = trainer.evaluate(params, config, data)
    print(json.dumps({"mean_distance": float(dist.mean()), "n": len(data), "r_aed": score}))
    return 0


# -- ablation -----------------------------------------------------------------

def cmd_ablate(args) -> int:
    data, _ = synth.load(args.data)
    if args.test:
        test = synth.load(args.test)[0]
    else:
        n_test = max(1, len(data) // 5)
        data, test = data[:-n_test], data[-n_test:]
    try:
        base = trainer.TrainConfig(lr0=args.lr, max_epochs=args.epochs,
                                   patience=min(args.patience, args.epochs), seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    results = ablation.run_grid(data, test, base, seeds=range(args.seed, args.seed + args.seeds),
                                widths=args.widths, msce_scales=args.scales)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ablation.write_csv(results, out / "ablation.csv")
    table = ablation.markdown(results)
    (out / "ablation.md").write_text(table)
    cells = out / "cells"
    cells.mkdir(exist_ok=True)
    for r in results:
        for seed_offset, rec in enumerate(r.records):
            rec.write_json(cells / f"cell{r.cell.index}_seed{args.seed + seed_offset}.json")
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msce", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("landscape", help="normalized loss vs predicted coordinate (toy 1-D setup)")
    s.add_argument("--loss", choices=["mse", "sce", "msce"], required=True)
    s.add_argument("--scales", type=int, default=None, help="MSCE scale count (default: log2 of classes)")
    s.add_argument("--classes", type=int, default=256)
    s.add_argument("--gt", type=int, default=70)
    s.add_argument("--amplitude", type=float, default=10.0)
    s.add_argument("--pool", choices=[k.value for k in PoolKind], default="max")
    s.add_argument("--out", default="landscape")
    s.set_defaults(func=cmd_landscape)

    s = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--size", type=int, default=8)
    s.add_argument("--perturb", default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    d = synth.SynthSpec()
    s = sub.add_parser("gendata", help="write a synthetic fundus dataset")
    s.add_argument("--size", type=int, default=d.size)
    s.add_argument("--count", type=int, default=d.count)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--fovea-radius", type=float, nargs=2, default=list(d.fovea_radius), metavar=("LO", "HI"))
    s.add_argument("--disc-radius", type=float, nargs=2, default=list(d.disc_radius), metavar=("LO", "HI"))
    s.add_argument("--noise", type=float, default=d.noise)
    s.add_argument("--margin", type=float, default=d.margin)
    s.add_argument("--hard", action="store_true", help="place the fovea near the border")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gendata)

    t = trainer.TrainConfig()
    s = sub.add_parser("train", help="train a localizer and write checkpoint + run record")
    s.add_argument("--data", required=True)
    s.add_argument("--test", default=None)
    s.add_argument("--loss", choices=["mse", "sce", "msce"], default="msce")
    s.add_argument("--scales", type=int, default=None, help="MSCE scale count (default: log2 of image size)")
    s.add_argument("--pool", choices=[k.value for k in PoolKind], default="max")
    s.add_argument("--reduce", choices=[k.value for k in ReduceKind], default="sum")
    s.add_argument("--widths", type=_widths, default=(8, 16, 32))
    s.add_argument("--batch", type=int, default=t.batch_size)
    s.add_argument("--lr", type=float, default=t.lr0)
    s.add_argument("--decay-steps", type=int, default=t.decay_steps)
    s.add_argument("--decay-rate", type=float, default=t.decay_rate)
    s.add_argument("--epochs", type=int, default=t.max_epochs)
    s.add_argument("--patience", type=int, default=t.patience)
    s.add_argument("--seed", type=int, default=t.seed)
    s.add_argument("--val-fraction", type=float, default=t.val_fraction)
    s.add_argument("--monitor", choices=["val", "train"], default=t.monitor)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="R-AED of a checkpoint on a dataset (JSON to stdout)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run the nine-cell loss x head x batch grid")
    s.add_argument("--data", required=True)
    s.add_argument("--test", default=None, help="test set (default: last fifth of --data)")
    s.add_argument("--epochs", type=int, default=ablation.DESK_EPOCHS)
    s.add_argument("--patience", type=int, default=ablation.DESK_PATIENCE)
    s.add_argument("--lr", type=float, default=ablation.DESK_LR)
    s.add_argument("--scales", type=int, default=None, help="MSCE scale count (default: log2 of image size)")
    s.add_argument("--widths", type=_widths, default=(8, 16, 32))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=1, help="average each cell over this many seeds")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"msce {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, FileNotFoundError, IsADirectoryError, ShapeError,
            synth.GenerationError, trainer.TrainingDiverged) as e:
        print(f"msce {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
