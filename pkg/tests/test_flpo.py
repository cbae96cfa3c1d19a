import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mepanneal.chain import backward, marginals, path_entropy
from mepanneal.flpo import (
    anneal_flpo,
    assemble_matrices,
    backward_policy,
    distortion_flpo,
    facility_usage_flpo,
    free_energy_flpo,
    hard_paths,
    harden_policy,
    location_update,
    path_cost,
    path_probability,
    step_cost,
)
from mepanneal.instances import FlpoInstance
from mepanneal.oracles import enumerate_matrices, oracle_flpo_paths


@st.composite
def flpo_setups(draw, max_m=3):
    n = draw(st.integers(1, 5))
    m = draw(st.integers(1, max_m))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    caps = np.minimum(1.0, rng.uniform(0.3, 1.0, m) + 1.0 / m)
    inst = FlpoInstance(rng.uniform(0, 1, (n, 2)), m, rng.uniform(0, 1, 2), rng.uniform(0.1, 1, n), caps)
    Y = rng.uniform(0, 1, (m, 2))
    usage = rng.uniform(0, 1.5, m)
    return inst, Y, draw(st.floats(0, 5)), draw(st.floats(0, 3)), usage


def test_step_costs_are_squared_distances():
    inst = FlpoInstance(np.array([[0.0, 0.0]]), 2, [3.0, 0.0])
    c = step_cost(inst, np.array([[1.0, 0.0], [1.0, 1.0]]))
    assert c.start.tolist() == [[1.0, 2.0, 9.0]]
    assert c.step[2, 2] == 0.0  # destination idles for free
    assert c.step[0, 1] == 1.0
    assert c.final.tolist() == [4.0, 5.0, 0.0]


def test_single_facility_two_paths_softmax():
    inst = FlpoInstance(np.array([[0.0, 0.0]]), 1, [2.0, 0.0])
    Y = np.array([[1.0, 1.0]])
    law = oracle_flpo_paths(inst, Y, 0.7)
    # via facility: 2 + 2 = 4; straight: 4; then change Y to break the tie
    assert law.probs[0] == pytest.approx([0.5, 0.5])
    Y = np.array([[1.0, 0.0]])
    policy, _ = backward_policy(step_cost(inst, Y), None, 0.7)
    w = np.exp(-0.7 * np.array([2.0, 4.0]))
    assert policy.start[0] == pytest.approx(w / w.sum(), abs=1e-15)


@given(flpo_setups())
def test_policy_and_usage_match_path_enumeration(setup):
    inst, Y, beta, betap, usage = setup
    policy, _ = backward_policy(step_cost(inst, Y), usage, beta, betap, capacities=inst.capacities)
    law = oracle_flpo_paths(inst, Y, beta, betap, 10.0, usage)
    for i in range(inst.n):
        for p, g in enumerate(law.paths):
            assert abs(path_probability(policy, i, g) - law.probs[i, p]) <= 1e-12
    assert np.abs(law.probs.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(facility_usage_flpo(inst, policy) - law.usage(inst.weights, inst.facility_count)).max() <= 1e-12


@given(flpo_setups())
def test_stage_rows_are_stochastic(setup):
    inst, Y, beta, betap, usage = setup
    policy, _ = backward_policy(step_cost(inst, Y), usage, beta, betap, capacities=inst.capacities)
    assert np.abs(policy.start.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(policy.steps.sum(axis=-1) - 1).max(initial=0) <= 1e-12


@given(flpo_setups())
def test_zero_beta_gives_maximum_path_entropy(setup):
    inst, Y, _, _, _ = setup
    policy, _ = backward_policy(step_cost(inst, Y), None, 0.0)
    M = inst.facility_count
    assert abs(path_entropy(policy, inst.weights) - M * math.log(M + 1)) <= 1e-9


@given(flpo_setups())
def test_zero_penalty_weight_reduces_to_unconstrained(setup):
    inst, Y, beta, _, usage = setup
    a, _ = backward_policy(step_cost(inst, Y), usage, beta, 0.0, capacities=inst.capacities)
    b, _ = backward_policy(step_cost(inst, Y), None, beta)
    assert np.abs(a.start - b.start).max() <= 1e-12
    assert np.abs(a.steps - b.steps).max(initial=0) <= 1e-12
    assert abs(free_energy_flpo(inst, Y, a, beta, 0.0) - free_energy_flpo(inst, Y, b, beta)) <= 1e-12


@given(flpo_setups())
def test_location_matrices_match_path_sums(setup):
    inst, Y, beta, betap, usage = setup
    policy, _ = backward_policy(step_cost(inst, Y), usage, beta, betap, capacities=inst.capacities)
    mats = assemble_matrices(inst, policy)
    ref = enumerate_matrices(inst, policy.start, policy.steps)
    for name in ("A", "B", "Xbar", "C"):
        assert np.abs(getattr(mats, name) - ref[name]).max() <= 1e-12


@given(flpo_setups(max_m=4))
def test_location_update_zeroes_the_gradient(setup):
    inst, Y, beta, betap, usage = setup
    policy, _ = backward_policy(step_cost(inst, Y), usage, max(beta, 0.1), betap,
                                capacities=inst.capacities)
    Ys = location_update(assemble_matrices(inst, policy), inst)
    h = 1e-6

    def grad(Z):
        g = np.zeros_like(Z)
        for idx in np.ndindex(*Z.shape):
            e = np.zeros_like(Z)
            e[idx] = h
            g[idx] = (distortion_flpo(inst, Z + e, policy) - distortion_flpo(inst, Z - e, policy)) / (2 * h)
        return g

    ref = np.linalg.norm(grad(Ys + 1.0))
    assert np.linalg.norm(grad(Ys)) <= 1e-4 * ref


def test_unused_facility_makes_the_system_singular_and_is_flagged():
    from mepanneal.trace import SolverTrace

    inst = FlpoInstance(np.array([[0.0, 0.0]]), 2, [1.0, 0.0])
    Y = np.array([[0.5, 0.0], [50.0, 50.0]])
    policy, _ = backward(step_cost(inst, Y), 10.0)
    trace = SolverTrace()
    Yn = location_update(assemble_matrices(inst, policy), inst, previous=Y, trace=trace)
    assert trace.flags
    assert np.all(np.isfinite(Yn))


def test_hardening_prefers_destination_on_exact_ties():
    inst = FlpoInstance(np.array([[0.0, 0.0]]), 1, [2.0, 0.0])
    policy, _ = backward(step_cost(inst, np.array([[1.0, 1.0]])), 1.0)  # both paths cost 4
    assert hard_paths(harden_policy(policy)).tolist() == [[1]]


def test_marginals_conserve_mass():
    rng = np.random.default_rng(0)
    inst = FlpoInstance(rng.uniform(0, 1, (5, 2)), 3, [0.5, 0.5])
    policy, _ = backward(step_cost(inst, rng.uniform(0, 1, (3, 2))), 2.0)
    assert np.abs(marginals(policy).sum(axis=2) - 1).max() <= 1e-12


def test_single_node_single_facility_anneals_to_midpoint():
    inst = FlpoInstance(np.array([[0.0, 0.0]]), 1, [2.0, 0.0])
    sol = anneal_flpo(inst)
    assert sol.locations[0] == pytest.approx([1.0, 0.0], abs=1e-6)
    assert sol.paths.tolist() == [[0]]
    assert sol.cost == pytest.approx(2.0, abs=1e-9)
    assert path_cost(inst, sol.locations, 0, sol.paths[0]) == pytest.approx(sol.cost)


def test_capacitated_anneal_is_feasible_and_monotone():
    rng = np.random.default_rng(1)
    inst = FlpoInstance(rng.uniform(0, 2, (30, 2)), 3, [1.0, 1.0], capacities=[0.4, 1.0, 1.0])
    sol = anneal_flpo(inst, seed=1)
    assert sol.feasible
    assert sol.usage[0] <= 0.41
    assert sol.trace.is_monotone()
    assert sol.paths.shape == (30, 3)
