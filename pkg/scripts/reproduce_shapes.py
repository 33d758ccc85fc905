"""Print the toilet shape patterns, inferred span and the smoothed shower basis."""

import numpy as np

from hydrosep import shapes

TOILET = [[0.7, 0.8], [1.0, 0.5], [0.5, 1.0], [0.8, 2.5], [3.2, 1.7], [0.8, 0.8], [1.0, 1.0]]


def main():
    Y = np.zeros((96, len(TOILET) + 1))
    for p, (a, b) in enumerate(TOILET):
        Y[30:32, p] = a, b
    Y[50, -1] = 1.6
    span = shapes.infer_span(Y)
    mapped = shapes.consumption_mapping(Y, span)
    print("toilet span:", sorted(span))
    for pat, count in shapes.pattern_counts(mapped):
        print("  pattern", "".join(map(str, pat)), "count", count)

    S = np.zeros((96, 1))
    S[10:13, 0] = [17.28, 9.61, 1.69]
    sm = shapes.smooth_bases(S, {1, 2, 3}, combinations="all")
    print("shower candidates:", sm.n_candidates, "pruned:", sm.n_pruned)
    for b in sm.bases:
        nz = np.flatnonzero(b)
        print("  basis at intervals", nz.tolist(), np.round(b[nz], 4).tolist())


if __name__ == "__main__":
    main()
