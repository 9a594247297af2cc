"""Min gradient norm against the budget K with c0 = 1/sqrt(K)."""

import argparse
from pathlib import Path

from cgt.cli import main as cli_main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(CONFIGS / "rate_powernorm.toml"))
    ap.add_argument("--K", type=int, nargs="+", default=[100, 400, 1600, 6400, 25600])
    ap.add_argument("--output", default="runs/rate_powernorm")
    args = ap.parse_args()
    raise SystemExit(cli_main(["rate", args.config, "--K", *map(str, args.K),
                               "--output", args.output]))
