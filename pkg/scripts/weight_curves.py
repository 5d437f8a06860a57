"""Tabulate unnormalized pair weights w(d) for exp and the bounded activations, one CSV per temperature."""
import argparse
from pathlib import Path

from pslrec.cli import weights_table, write_csv
from pslrec.activations import ADVOCATED, Activation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--taus", default="0.1,0.2,0.5")
    ap.add_argument("--points", type=int, default=201)
    ap.add_argument("--out", default="results/weights")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tau in (float(t) for t in args.taus.split(",")):
        header, rows = weights_table(tau, [Activation.EXP, *ADVOCATED], args.points)
        write_csv(out / f"weights_tau{tau:g}.csv", header, rows)
        # where does each bounded weight stop growing
        for c, name in enumerate(header[1:], start=1):
            peak = max(range(len(rows)), key=lambda r: rows[r][c])
            print(f"tau={tau:g} {name:>14}: max weight {rows[peak][c]:.4g} at d={rows[peak][0]:+.2f}")


if __name__ == "__main__":
    main()
