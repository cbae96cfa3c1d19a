import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mepanneal.core import (
    InfeasibleCapacitiesError,
    InvalidInstanceError,
    PenaltyConfig,
)
from mepanneal.flp import (
    FlpState,
    anneal_flp,
    centroid_update,
    constrained_gibbs_map,
    critical_beta,
    distinct_count,
    entropy,
    facility_usage,
    free_energy,
    gibbs_constrained,
    gibbs_residual,
    gibbs_unconstrained,
    harden,
)
from mepanneal.instances import FlpInstance
from mepanneal.oracles import oracle_flp


def two_points():
    return FlpInstance(np.array([[-1.0, 0.0], [1.0, 0.0]]), 2)


@st.composite
def flp_setups(draw, constrained=False):
    n = draw(st.integers(2, 8))
    m = draw(st.integers(1, min(n, 4)))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    caps = None
    if constrained:
        caps = rng.uniform(0.3, 1.0, m)
        caps = np.minimum(1.0, caps * max(1.0, 1.05 / caps.sum()))
        if caps.sum() < 1:
            caps[:] = 1.0
    inst = FlpInstance(rng.uniform(-1, 1, (n, 2)), m, rng.uniform(0.1, 1, n), caps)
    Y = rng.uniform(-1, 1, (m, 2))
    return inst, Y, draw(st.floats(0.0, 20.0))


def test_instance_validation():
    with pytest.raises(InfeasibleCapacitiesError, match="infeasible capacities"):
        FlpInstance(np.zeros((2, 2)), 2, capacities=[0.3, 0.3])
    with pytest.raises(InvalidInstanceError):
        FlpInstance(np.zeros((2, 2)), 0)
    with pytest.raises(InvalidInstanceError):
        FlpInstance(np.zeros((2, 2)), 1, weights=[1.0, -1.0])
    inst = FlpInstance(np.zeros((2, 2)), 1, weights=[3.0, 1.0])
    assert inst.weights.tolist() == [0.75, 0.25]


@given(flp_setups())
def test_gibbs_rows_stochastic_and_entropy_bounded(setup):
    inst, Y, beta = setup
    P = gibbs_unconstrained(inst, Y, beta)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    H = entropy(inst, FlpState(Y, P))
    assert -1e-12 <= H <= math.log(inst.facility_count) + 1e-12


@given(flp_setups())
def test_zero_beta_gives_uniform_associations_and_max_entropy(setup):
    inst, Y, _ = setup
    P = gibbs_unconstrained(inst, Y, 0.0)
    M = inst.facility_count
    assert np.max(np.abs(P - 1 / M)) <= 1e-15
    assert abs(entropy(inst, FlpState(Y, P)) - math.log(M)) <= 1e-9


@given(flp_setups(constrained=True))
def test_zero_penalty_weight_reduces_to_unconstrained(setup):
    inst, Y, beta = setup
    P0 = gibbs_unconstrained(inst, Y, beta)
    P = gibbs_constrained(inst, Y, beta, 0.0)
    assert np.max(np.abs(P - P0)) <= 1e-12
    state = FlpState(Y, P0)
    plain = FlpInstance(inst.nodes, inst.facility_count, inst.weights)
    assert abs(free_energy(inst, state, beta, 0.0) - free_energy(plain, state, beta)) <= 1e-12


@given(flp_setups(constrained=True), st.floats(0.01, 50))
def test_constrained_associations_solve_the_penalised_gibbs_equations(setup, betap):
    inst, Y, beta = setup
    P = gibbs_constrained(inst, Y, beta, betap)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    assert gibbs_residual(inst, Y, P, beta, betap) <= 1e-7


def test_prices_push_usage_down():
    rng = np.random.default_rng(0)
    inst = FlpInstance(rng.uniform(0, 1, (30, 2)), 2, capacities=[0.3, 1.0])
    Y = np.array([[0.5, 0.5], [3.0, 3.0]])  # everything prefers facility 0
    free = facility_usage(inst, gibbs_unconstrained(inst, Y, 1.0))
    tight = facility_usage(inst, gibbs_constrained(inst, Y, 1.0, 100.0))
    assert free[0] > 0.9
    assert tight[0] < free[0]
    assert tight[0] <= 0.3 + 0.05


def test_constrained_gibbs_map_fixed_point_is_stationary():
    rng = np.random.default_rng(3)
    inst = FlpInstance(rng.uniform(0, 1, (10, 2)), 3, capacities=[0.3, 0.4, 0.5])
    Y = rng.uniform(0, 1, (3, 2))
    P = gibbs_constrained(inst, Y, 5.0, 2.0)
    fmap = constrained_gibbs_map(inst, Y, 5.0, 2.0, PenaltyConfig())
    assert np.max(np.abs(fmap(P) - P)) <= 1e-7


def test_centroid_update_is_weighted_mean_and_holds_empty():
    inst = FlpInstance(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0]]), 2, [1, 1, 2])
    P = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    prev = np.array([[9.0, 9.0], [7.0, 7.0]])
    from mepanneal.trace import SolverTrace

    trace = SolverTrace()
    Y = centroid_update(inst, P, prev, trace)
    assert Y[0] == pytest.approx([0.5, 2.0])
    assert Y[1].tolist() == [7.0, 7.0]
    assert trace.flags


def test_critical_beta_two_points():
    assert critical_beta(two_points()) == pytest.approx(0.5)
    single = FlpInstance(np.zeros((1, 2)), 1)
    assert critical_beta(single) == math.inf


def test_distinct_count_merges_close_points():
    Y = np.array([[0, 0], [1e-5, 0], [1, 0]], dtype=float)
    assert distinct_count(Y, 1e-3) == 2


def test_harden_breaks_ties_to_lowest_index():
    inst = two_points()
    P = np.array([[0.5, 0.5], [0.2, 0.8]])
    a, cost = harden(inst, P, np.array([[-1.0, 0.0], [1.0, 0.0]]))
    assert a.tolist() == [0, 1]
    assert cost == 0.0


def test_anneal_two_points_splits_and_is_exact():
    sol = anneal_flp(two_points())
    assert sol.cost == pytest.approx(0.0, abs=1e-12)
    assert sorted(sol.locations[:, 0].round(6).tolist()) == [-1.0, 1.0]
    assert sol.trace.is_monotone()


def test_anneal_symmetric_four_points_split_left_right():
    nodes = np.array([[-1, 1], [-1, -1], [1, 1], [1, -1]], dtype=float) * [2, 1]
    sol = anneal_flp(FlpInstance(nodes, 2))
    assert sol.assignment[0] == sol.assignment[1] != sol.assignment[2] == sol.assignment[3]
    assert sol.cost == pytest.approx(oracle_flp(FlpInstance(nodes, 2)).value)


def test_anneal_respects_capacity():
    rng = np.random.default_rng(7)
    inst = FlpInstance(rng.uniform(0, 1, (8, 2)), 2, capacities=[0.4, 1.0])
    sol = anneal_flp(inst)
    assert sol.feasible
    assert sol.usage[0] <= 0.4 + 0.01
    oracle = oracle_flp(inst)
    assert sol.cost >= oracle.value - 1e-12
    assert sol.trace.is_monotone()


def test_anneal_is_deterministic_for_a_seed():
    rng = np.random.default_rng(2)
    inst = FlpInstance(rng.uniform(0, 1, (12, 2)), 3, capacities=[0.3, 0.4, 0.5])
    a, b = anneal_flp(inst, seed=4), anneal_flp(inst, seed=4)
    assert np.array_equal(a.locations, b.locations)
    assert a.trace.rows == b.trace.rows
