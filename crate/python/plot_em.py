#!/usr/bin/env python3
"""Plot transformation gain curves from a pmclab em CSV.

Usage: python3 python/plot_em.py em.csv [out.png]
"""

import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    path = sys.argv[1]
    out = sys.argv[2] if len(sys.argv) > 2 else "em.png"
    curves = defaultdict(list)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            curves[row["chain_id"]].append((int(row["m"]), float(row["e_m"])))
    fig, ax = plt.subplots(figsize=(7, 4))
    for chain, pts in sorted(curves.items()):
        pts.sort()
        ax.plot([m for m, _ in pts], [e for _, e in pts], label=f"chain {chain}")
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("m")
    ax.set_ylabel("E(m)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
