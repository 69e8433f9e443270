"""Loss-vs-coordinate curves for MSE, SCE and MSCE (M=4, M=8) on a 256-class axis.

Writes one CSV/SVG pair per curve into the output directory.
"""
import argparse
from pathlib import Path

from msce.cli import main as cli

CURVES = [("mse", []), ("sce", []), ("msce_m4", ["--scales", "4"]), ("msce_m8", ["--scales", "8"])]


def run(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, extra in CURVES:
        loss = name.split("_")[0]
        code = cli(["landscape", "--loss", loss, *extra, "--out", str(out / name)])
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/landscape"))
    run(ap.parse_args().out)
