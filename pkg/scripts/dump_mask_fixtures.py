#!/usr/bin/env python3
"""Dump mask bitmaps for random (grid, ratio, seed) triples as JSON.

External feature extractors must reproduce these masks bit-for-bit; their
test suites consume this file as the ground truth for the shared
splitmix64 / Fisher-Yates cell-selection rule.
"""

import argparse
import json
import sys

import numpy as np

from coca.masking import generate_mask, masked_cell_count


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=100)
    parser.add_argument("--seed", type=int, default=20240501)
    parser.add_argument("--out", default="mask_fixtures.json")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = []
    while len(cases) < args.count:
        grid = int(rng.integers(2, 17))
        ratio = float(np.round(rng.uniform(0.0, 0.9), 4))
        seed = int(rng.integers(0, 2**63))
        try:
            mask = generate_mask(grid, ratio, seed)
        except ValueError:
            continue  # fully-masked draw; resample
        cases.append({
            "grid": grid,
            "ratio": ratio,
            # string: 64-bit seeds overflow double-precision JSON consumers
            "seed": str(seed),
            "masked_count": masked_cell_count(grid, ratio),
            "kept_bitmap": "".join("1" if k else "0" for k in mask.kept.reshape(-1)),
        })

    with open(args.out, "w") as fh:
        json.dump({"algorithm": "splitmix64 partial fisher-yates", "cases": cases}, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(cases)} cases to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
