"""Simulate each example agent once and audit it, printing the sufficiency and monotone tables."""
import argparse
import tempfile
from pathlib import Path

from beliefaudit.cli import main as cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
AGENTS = ("truthful", "constant", "theta_leaky", "rank_flip")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--out", default=None, help="keep outputs here instead of a temp dir")
    args = ap.parse_args()
    root = Path(args.out or tempfile.mkdtemp(prefix="beliefaudit-demo-"))
    for name in AGENTS:
        records = root / f"{name}.jsonl"
        cli(["simulate", "--net", str(CONFIGS / "net_layered.json"),
             "--agent", str(CONFIGS / f"agent_{name}.json"),
             "--n", str(args.n), "--seed", str(args.seed), "--out", str(records)])
        cli(["audit", str(records), "--seed", str(args.seed), "--out", str(root / name),
             "--tests", "ci", "predictive", "monotone", "--label", name, "--format", "md"])
        print((root / name / "tables.md").read_text())
    print(f"outputs in {root}")


if __name__ == "__main__":
    main()
