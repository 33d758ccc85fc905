"""Accuracy on a fixed held-out set after training on the first P generated days."""

import argparse

import numpy as np

from hydrosep import experiment as ex, syngen
from hydrosep.data import DEVICES
from hydrosep.inference import GibbsConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="50,400", help="comma-separated training sizes")
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--test-days", type=int, default=40)
    ap.add_argument("-T", type=int, default=200)
    ap.add_argument("-s", type=int, default=40)
    ap.add_argument("--em-iters", type=int, default=3)
    args = ap.parse_args()
    sizes = [int(v) for v in args.sizes.split(",")]
    freq, pools = syngen.default_frequency_model(), syngen.default_event_dictionary()

    print("rep," + ",".join(f"accuracy_{P}" for P in sizes))
    table = []
    for rep in range(args.reps):
        gen = syngen.generate_days(max(sizes) + args.test_days, freq, pools, rng=rep)
        data = {d: gen.matrices[d].values for d in DEVICES}
        test = np.arange(max(sizes), max(sizes) + args.test_days)
        cfg = ex.PipelineConfig(gibbs=GibbsConfig(T=args.T, s=args.s, em_iters=args.em_iters,
                                                  seed=rep))
        acc = [ex.run_fold(data, np.arange(P), test, cfg).report.accuracy for P in sizes]
        table.append(acc)
        print(f"{rep}," + ",".join(f"{a:.4f}" for a in acc), flush=True)
    print("mean," + ",".join(f"{a:.4f}" for a in np.mean(table, axis=0)))


if __name__ == "__main__":
    main()
