"""Grid-search the desk-scale regularization weights on held-out random phantoms.

Validation cases use the default experiment geometry with random phantoms
(seeds 1000, 1001) that are disjoint from the training phantoms (0..7).
"""
import argparse
import json

import numpy as np

from wcrr3d.pipeline import (ExperimentManifest, PhantomSpec, ValidationCase, grid_search,
                             simulate_case)

GRIDS = {
    "tv": (np.logspace(1, 6, 11), [None]),
    "wavelet": (np.logspace(1, 6, 11), [None]),
    "wcrr": (np.logspace(1, 6, 11), [0.01, 0.03, 0.05, 0.1]),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("methods", nargs="*", default=list(GRIDS))
    ap.add_argument("--cases", type=int, default=2)
    args = ap.parse_args()
    base = ExperimentManifest()
    cases = []
    for i in range(args.cases):
        m = base.model_copy(update={"phantom": PhantomSpec(kind="random", seed=1000 + i),
                                    "seed": base.seed + i})
        gt, coils, traj, y = simulate_case(m)
        cases.append(ValidationCase(gt, y, coils, traj))
    for name in args.methods:
        lams, sigmas = GRIDS[name]
        res = grid_search(cases, name, [float(v) for v in lams], sigmas)
        for row in res.table:
            print(name, json.dumps(row), flush=True)
        print(name, "best", json.dumps(res.best), res.score, flush=True)


if __name__ == "__main__":
    main()
