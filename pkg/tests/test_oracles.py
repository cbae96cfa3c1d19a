import ast
import math
from pathlib import Path

import numpy as np
import pytest

import mepanneal
from mepanneal.core import TooLargeError
from mepanneal.instances import (
    FlpInstance,
    FlpoInstance,
    LmdpInstance,
    Package,
    Vehicle,
)
from mepanneal.oracles import (
    assignment_cost,
    describe_itinerary,
    itinerary_arrival,
    oracle_flp,
    oracle_flpo_paths,
    oracle_lmdp,
    package_itineraries,
)

SOLVER_MODULES = {"flp", "flpo", "lmdp", "chain", "cli", "fileio"}


def test_oracles_import_no_solver_modules():
    tree = ast.parse(Path(mepanneal.__file__).with_name("oracles.py").read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom) and node.level:
            imported.add((node.module or "").split(".")[0])
            imported.update(a.name for a in node.names if not node.module)
    assert imported.isdisjoint(SOLVER_MODULES), imported


def test_single_facility_cost_is_weighted_variance():
    inst = FlpInstance(np.array([[0.0, 0.0], [2.0, 0.0]]), 1, [1.0, 3.0])
    rep = oracle_flp(inst)
    # mean 1.5; variance 0.25*2.25 + 0.75*0.25
    assert rep.value == pytest.approx(0.75)
    assert rep.searched == 1


def test_symmetric_four_points_split_left_right():
    nodes = np.array([[-2, 1], [-2, -1], [2, 1], [2, -1]], dtype=float)
    rep = oracle_flp(FlpInstance(nodes, 2))
    assert rep.witness.tolist() == [0, 0, 1, 1]
    assert rep.value == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_flp_witness_respects_capacity_and_reevaluates(seed):
    rng = np.random.default_rng(seed)
    inst = FlpInstance(rng.uniform(0, 1, (8, 2)), 2, capacities=[0.4, 1.0])
    rep = oracle_flp(inst)
    assert inst.weights[rep.witness == 0].sum() <= 0.4 + 1e-12
    assert abs(assignment_cost(inst, rep.witness) - rep.value) <= 1e-10
    free = oracle_flp(inst, capacity_mode=False)
    assert free.value <= rep.value + 1e-12


def test_flp_size_guard():
    with pytest.raises(TooLargeError, match="10000000"):
        oracle_flp(FlpInstance(np.zeros((24, 2)), 2))


def test_flpo_single_facility_is_softmax_of_two_costs():
    inst = FlpoInstance(np.array([[0.0, 0.0]]), 1, [3.0, 0.0])
    law = oracle_flpo_paths(inst, np.array([[1.0, 0.0]]), 0.5)
    # via facility 1 + 4 = 5, direct 9
    w = np.exp(-0.5 * np.array([5.0, 9.0]))
    assert law.probs[0] == pytest.approx(w / w.sum(), abs=1e-15)
    assert law.costs[0].tolist() == [5.0, 9.0]


def test_flpo_law_is_normalised():
    rng = np.random.default_rng(0)
    inst = FlpoInstance(rng.uniform(0, 1, (4, 2)), 3, [0.5, 0.5], capacities=[0.5, 0.6, 1.0])
    law = oracle_flpo_paths(inst, rng.uniform(0, 1, (3, 2)), 2.0, 1.0, 10.0, [0.3, 0.9, 0.2])
    assert law.paths.shape == (64, 3)
    assert np.abs(law.probs.sum(axis=1) - 1).max() <= 1e-12


def test_flpo_size_guard():
    inst = FlpoInstance(np.zeros((7, 2)), 7, [0.0, 0.0])
    with pytest.raises(TooLargeError):
        oracle_flpo_paths(inst, np.zeros((7, 2)), 1.0)


def test_lmdp_timetable_optimum(timetable):
    rep = oracle_lmdp(timetable)
    assert rep.value == pytest.approx(60.0)
    assert {k: describe_itinerary(timetable, v) for k, v in rep.witness.items()} == {
        "b1": "B1->(V3)->B4",
        "b2": "B2->(V3)->B3->(V3)->B1->(V3)->B4",
        "b3": "B3->(V2)->B1->(V3)->B4",
    }


def test_lmdp_two_thirds_capacity(timetable):
    rep = oracle_lmdp(timetable.with_capacity(2 / 3))
    arrivals = {k: itinerary_arrival(timetable, v) for k, v in rep.witness.items()}
    assert sorted(arrivals.values()) == [60, 60, 90]
    assert rep.value == pytest.approx(70.0)
    assert describe_itinerary(timetable, rep.witness["b1"]) == "B1->(V1)->B2->(V1)->B3->(V1)->B4"


def test_lmdp_quarter_capacity_is_infeasible(timetable):
    rep = oracle_lmdp(timetable.with_capacity(0.25))
    assert not rep.feasible and rep.witness is None and math.isinf(rep.value)


def test_lmdp_witness_reevaluates(timetable):
    rep = oracle_lmdp(timetable.with_capacity(2 / 3))
    total = sum(w * itinerary_arrival(timetable, rep.witness[p.name])
                for w, p in zip(timetable.weights, timetable.packages))
    assert abs(total - rep.value) <= 1e-10


def test_lmdp_transfer_needs_time_order():
    inst = LmdpInstance(("A", "B", "C"),
                        (Vehicle("V", ("A", "B"), (0, 10)), Vehicle("W", ("B", "C"), (5, 20))),
                        (Package("p", "A", "C"),))
    assert package_itineraries(inst, 0) == []
    assert oracle_lmdp(inst).witness == {}  # undeliverable packages are left out
