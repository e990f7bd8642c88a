"""Size/power matrix for the example agents (20 seeds, n=200 contexts x 5 repetitions)."""
import argparse
from pathlib import Path

from beliefaudit.cli import main as cli

GRID = Path(__file__).resolve().parent.parent / "configs" / "power_grid.json"

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", default=str(GRID))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="power_study")
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    raise SystemExit(cli(["power-study", "--grid", a.grid, "--seed", str(a.seed), "--out", a.out,
                          "--jobs", str(a.jobs)]))
