"""Distinct facility count versus beta, against the predicted critical beta.

Default instance: two unit-weight points at (-1, 0) and (1, 0), whose first
split is predicted at beta = 1 / (2 * largest covariance eigenvalue) = 0.5.
Pass --nodes N to use N uniform random points instead.
"""

import argparse

import numpy as np

from mepanneal import AnnealSchedule, FlpInstance, anneal_flp, emit_trace
from mepanneal.flp import critical_beta


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=0)
    ap.add_argument("--facilities", type=int, default=2)
    ap.add_argument("--alpha", type=float, default=1.05)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trace", help="write the annealing trace CSV here")
    args = ap.parse_args()
    if args.nodes:
        nodes = np.random.default_rng(args.seed).uniform(-1, 1, (args.nodes, 2))
    else:
        nodes = np.array([[-1.0, 0.0], [1.0, 0.0]])
    inst = FlpInstance(nodes, args.facilities)
    bcr = critical_beta(inst)
    sol = anneal_flp(inst, AnnealSchedule(bcr / 20, 1e3, args.alpha), seed=args.seed)
    print(f"predicted first split at beta = {bcr:.4f}")
    prev = None
    for row in sol.trace.rows:
        if row.distinct_or_max_occupancy != prev:
            print(f"beta {row.beta:10.4f}: {int(row.distinct_or_max_occupancy)} distinct facilities, "
                  f"distortion {row.distortion:.5f}")
            prev = row.distinct_or_max_occupancy
    if args.trace:
        emit_trace(args.trace, sol.trace)


if __name__ == "__main__":
    main()
