"""Run a benchmark config and print the final mean regret of every method.

    python scripts/compare_methods.py configs/within_model.yaml [--jobs N] [key=value ...]
"""

import argparse
import csv
import sys
from pathlib import Path

import yaml

from robust_bo import cli


def final_row(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    last = rows[-1]
    return float(last["mean_regret"]), float(last["ci_halfwidth"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("overrides", nargs="*", metavar="key=value")
    args = ap.parse_args(argv)

    code = cli.main(["run", "--config", args.config, "--jobs", str(args.jobs), *args.overrides])
    if code != 0:
        return code
    out = Path(yaml.safe_load(Path(args.config).read_text()).get("out", "runs"))
    for o in args.overrides:
        key, _, value = o.partition("=")
        if key == "out":
            out = Path(value)
    print(f"\n{'method':>14s} {'rate':>5s} {'final regret':>13s} {'95% half-width':>15s}")
    for path in sorted(out.glob("summary_*.csv")):
        _, mode_rate = path.stem.split("_", 1)
        mode, _, rate = mode_rate.rpartition("_rho")
        mean, half = final_row(path)
        print(f"{mode:>14s} {rate:>5s} {mean:13.4g} {half:15.2g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
