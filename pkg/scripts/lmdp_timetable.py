"""Delivery plans on the bundled four-depot timetable at several vehicle capacities.

Prints each package's itinerary and arrival minute next to the exhaustive optimum.
"""

import argparse

from mepanneal import anneal_lmdp, example_lmdp_path, load_instance
from mepanneal.oracles import describe_itinerary, oracle_lmdp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--capacities", type=float, nargs="+", default=[1.0, 2 / 3, 0.25])
    args = ap.parse_args()
    base = load_instance(example_lmdp_path())
    for cap in args.capacities:
        inst = base.with_capacity(cap)
        plan = anneal_lmdp(inst)
        best = oracle_lmdp(inst)
        print(f"capacity {cap:.3f}: total {plan.total_cost:.2f} min, feasible {plan.feasible}, "
              f"exhaustive optimum {best.value:.2f}")
        for it in plan.itineraries:
            print(f"  {it.package}: {it.route_string():40s} {it.total:5.0f} min")
        if best.witness:
            alt = ", ".join(f"{k}: {describe_itinerary(inst, v)}" for k, v in best.witness.items())
            print(f"  exhaustive witness: {alt}")
        for note in plan.trace.flags:
            print(f"  note: {note}")


if __name__ == "__main__":
    main()
