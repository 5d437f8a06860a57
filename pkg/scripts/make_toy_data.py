"""Write the bundled toy interaction files (long-tail 200x200 and planted 20x20)."""
import argparse
from pathlib import Path

from pslrec.data import spawn_rngs
from pslrec.synthetic import long_tail, planted_blocks


def write(d, path: Path, user_prefix="u", item_prefix="i"):
    users, items = d.pairs()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# user\titem\n")
        for u, i in zip(users.tolist(), items.tolist()):
            fh.write(f"{user_prefix}{u}\t{item_prefix}{i}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (rng,) = spawn_rngs(args.seed, 1)
    write(long_tail(rng=rng), out / "toy.tsv")
    write(planted_blocks(), out / "planted.tsv")
    print(out)


if __name__ == "__main__":
    main()
