"""Temperature placement comparison on the planted block dataset, across learning rates and seeds."""
import argparse

import numpy as np

from pslrec.data import Dataset, SplitBundle
from pslrec.losses import psl_spec
from pslrec.metrics import evaluate_train
from pslrec.optim import TrainConfig, train
from pslrec.synthetic import planted_blocks


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--activation", default="atan_plus_one")
    ap.add_argument("--taus", default="0.05,0.2")
    ap.add_argument("--lrs", default="0.003,0.01")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()
    d = planted_blocks()
    split = SplitBundle(train=d, test=Dataset.empty_like(d))
    print("tau,lr,placement,mean_train_ndcg@20,min,max")
    for tau in (float(t) for t in args.taus.split(",")):
        for lr in (float(x) for x in args.lrs.split(",")):
            for placement in ("outside", "inside"):
                spec = psl_spec(args.activation, tau, placement)
                vals = np.array([
                    evaluate_train(train(split, spec, TrainConfig(lr=lr, epochs=args.epochs, dim=8, n_negatives=16,
                                                                  seed=s, select_on="train")).model, d).ndcg(20)
                    for s in range(args.seeds)])
                print(f"{tau:g},{lr:g},{placement},{vals.mean():.4f},{vals.min():.4f},{vals.max():.4f}")


if __name__ == "__main__":
    main()
