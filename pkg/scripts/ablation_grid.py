"""Nine-cell loss x head x batch-size grid on the desk-scale data.

Each cell is averaged over --seeds training seeds. Set MSCE_THREADS to run
cells in parallel processes.
"""
import argparse
from pathlib import Path

from msce import ablation, synth, trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("results/ablation"))
    args = ap.parse_args()

    train_set = synth.generate(synth.SynthSpec(size=64, count=200, seed=0))
    test_set = synth.generate(synth.SynthSpec(size=64, count=50, seed=1))
    base = trainer.TrainConfig(lr0=ablation.DESK_LR, max_epochs=args.epochs, patience=args.patience)
    results = ablation.run_grid(train_set, test_set, base, seeds=range(args.seeds))

    args.out.mkdir(parents=True, exist_ok=True)
    ablation.write_csv(results, args.out / "ablation.csv")
    table = ablation.markdown(results)
    (args.out / "ablation.md").write_text(table)
    print(table, end="")


if __name__ == "__main__":
    main()
