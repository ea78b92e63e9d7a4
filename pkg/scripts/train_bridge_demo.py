#!/usr/bin/env python3
"""End-to-end demo on the 12-terminal bridge fixture.

Trains the sampler until the loss threshold, draws a dataset from the
checkpoint, compares against uniform-random draws, and dumps the exact
flows so the learned terminal distribution can be eyeballed against R/Z.
Takes a few seconds; everything lands under --out.
"""

import argparse
import csv
import sys
from pathlib import Path

from blockflow.cli import main as cli

REPO = Path(__file__).resolve().parent.parent


def run(argv):
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("out/bridge_demo"))
    parser.add_argument("--config", type=Path,
                        default=REPO / "configs" / "train_bridge.json")
    parser.add_argument("--samples", type=int, default=5000)
    args = parser.parse_args()

    out = args.out
    cfg = str(args.config)
    run(["train", "--config", cfg, "--out", str(out)])
    ckpt = out / "checkpoint.json"
    run(["sample", "--config", cfg, "--checkpoint", str(ckpt),
         "-n", str(args.samples), "--seed", "1", "--out", str(out)])
    run(["baseline", "--config", cfg, "--checkpoint", str(ckpt),
         "-n", str(args.samples), "--seed", "2", "--out", str(out)])
    run(["flows", "--config", cfg, "--out", str(out)])

    # side-by-side: empirical frequency vs exact probability per terminal
    with open(out / "terminal_probs.csv", newline="") as fh:
        exact = {row["assembly_record"]: float(row["probability"])
                 for row in csv.DictReader(fh)}
    with open(out / "dataset.csv", newline="") as fh:
        drawn = {row["assembly_record"]: int(row["sample_count"])
                 for row in csv.DictReader(fh)}
    total = sum(drawn.values())
    print(f"\n{'record':<16} {'exact':>8} {'sampled':>8}")
    for record in sorted(exact, key=exact.get, reverse=True):
        print(f"{record:<16} {exact[record]:>8.4f} {drawn.get(record, 0) / total:>8.4f}")
    l1 = sum(abs(drawn.get(r, 0) / total - p) for r, p in exact.items())
    print(f"\nL1 distance over {total} draws: {l1:.4f}")


if __name__ == "__main__":
    main()
