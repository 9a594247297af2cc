"""CGT against GT and DGD-clip on the a9a setup; writes one long-format CSV and prints a summary."""

import argparse
from pathlib import Path

import numpy as np

from cgt.cli import main as cli_main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output", default="runs/a9a_compare")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    argv = ["compare"] + [str(CONFIGS / f"a9a_{a}.toml") for a in ("cgt", "gt", "dgd_clip")]
    argv += ["--output", args.output]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if cli_main(argv):
        raise SystemExit(1)
    data = np.genfromtxt(args.output + ".csv", delimiter=",", names=True, dtype=None,
                         encoding="ascii")
    print(f"{'algorithm':10s} {'rows':>5s} {'final loss':>12s} {'final grad':>12s} {'tail std':>10s}")
    for algo in ("cgt", "gt", "dgd_clip"):
        rows = data[data["algorithm"] == algo]
        g = rows["grad_norm_avg"]
        print(f"{algo:10s} {len(rows):5d} {rows['loss_avg'][-1]:12.6g} {g[-1]:12.4g} "
              f"{np.std(g[-500:]):10.4g}")


if __name__ == "__main__":
    main()
