"""Last-mile delivery over service-vehicle timetables, with vehicle capacities.

A package rides vehicles between depots.  The states are "aboard vehicle V as
it leaves its r-th route stop" (departure-states) and one terminal per depot.
Every move's cost is the elapsed time, so a path's cost is the minute at which
the package reaches its destination.  Capacities bound the weighted fraction
of packages aboard each departure-state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import (
    ChainPolicy,
    LayeredCosts,
    expected_cost,
    path_entropy,
    solve_chain,
    usage_of,
)
from .core import (
    AnnealSchedule,
    FixedPointConfig,
    InvalidInstanceError,
    PenaltyConfig,
    penalty_value,
)
from .instances import LmdpInstance
from .trace import SolverTrace

INF = float("inf")


# --- state space ----------------------------------------------------------


@dataclass(frozen=True)
class LmdpStateSpace:
    """Global state order: packages, departure-states, terminals.

    Departure-states are sorted by (vehicle index, depot index, occurrence),
    so lowest index is the documented tie-break order.
    """

    n_packages: int
    departures: tuple[tuple[int, int], ...]  # (vehicle index, route position)
    n_depots: int
    horizon: int  # stages including the package stage

    @property
    def size(self) -> int:
        return self.n_packages + len(self.departures) + self.n_depots

    def departure_index(self, k: int) -> int:
        return self.n_packages + k

    def terminal_index(self, depot: int) -> int:
        return self.n_packages + len(self.departures) + depot

    def kind(self, s: int) -> str:
        if s < self.n_packages:
            return "package"
        if s < self.n_packages + len(self.departures):
            return "departure"
        return "terminal"


def build_state_space(inst: LmdpInstance, horizon: int | None = None) -> LmdpStateSpace:
    depot_idx = {d: i for i, d in enumerate(inst.depots)}
    deps = sorted(
        ((k, r) for k, v in enumerate(inst.vehicles) for r in range(len(v.route))),
        key=lambda kr: (kr[0], depot_idx[inst.vehicles[kr[0]].route[kr[1]]], kr[1]),
    )
    R, S = len(inst.packages), len(deps) + len(inst.depots) + len(inst.packages)
    H = len(deps) + 2 if horizon is None else int(horizon)
    if not (len(deps) + 2 <= H <= S) and horizon is not None:
        raise InvalidInstanceError(f"horizon must lie in [{len(deps) + 2}, {S}]")
    return LmdpStateSpace(R, tuple(deps), len(inst.depots), H)


def state_label(inst: LmdpInstance, space: LmdpStateSpace, s: int) -> str:
    kind = space.kind(s)
    if kind == "package":
        return inst.packages[s].name
    if kind == "departure":
        k, r = space.departures[s - space.n_packages]
        v = inst.vehicles[k]
        return f"({v.route[r]},{v.name})"
    return inst.depots[s - space.n_packages - len(space.departures)]


def transition_cost(inst: LmdpInstance, space: LmdpStateSpace, s: int, a: int, package: int) -> float:
    """Minutes to move from state ``s`` to ``a`` for ``package``; ``inf`` if impossible."""
    pkg = inst.packages[package]
    ks, ka = space.kind(s), space.kind(a)
    if ks == "package":
        if s != package or ka != "departure":
            return INF
        k, r = space.departures[a - space.n_packages]
        v = inst.vehicles[k]
        return float(v.times[r]) if v.route[r] == pkg.origin and v.times[r] >= 0 else INF
    if ks == "terminal":
        return 0.0 if a == s else INF
    if ks != "departure":
        return INF
    k, r = space.departures[s - space.n_packages]
    v = inst.vehicles[k]
    if r + 1 >= len(v.route):
        return INF
    nxt, arrive = v.route[r + 1], float(v.times[r + 1])
    if ka == "terminal":
        depot = inst.depots[a - space.n_packages - len(space.departures)]
        return arrive - v.times[r] if depot == nxt == pkg.destination else INF
    if ka == "departure":
        k2, r2 = space.departures[a - space.n_packages]
        v2 = inst.vehicles[k2]
        if v2.route[r2] == nxt and v2.times[r2] >= arrive:
            return float(v2.times[r2]) - v.times[r]
        return INF
    return INF


def layered_costs(inst: LmdpInstance, space: LmdpStateSpace, packages=None) -> LayeredCosts:
    """Per-package stage costs over departure-states and terminals."""
    packages = range(len(inst.packages)) if packages is None else packages
    R0 = space.n_packages
    inner = list(range(R0, space.size))
    start, step, final = [], [], []
    for j in packages:
        start.append([transition_cost(inst, space, j, a, j) for a in inner])
        step.append([[transition_cost(inst, space, s, a, j) for a in inner] for s in inner])
        dest = space.terminal_index(inst.depots.index(inst.packages[j].destination))
        final.append([0.0 if s == dest else INF for s in inner])
    n = len(inner)
    return LayeredCosts(
        start=np.array(start, dtype=float).reshape(-1, n),
        step=np.array(step, dtype=float).reshape(-1, n, n),
        final=np.array(final, dtype=float).reshape(-1, n),
        steps=space.horizon - 1,
    )


# --- plans ----------------------------------------------------------------


@dataclass(frozen=True)
class Leg:
    vehicle: str
    board_depot: str
    board_time: float
    alight_depot: str
    alight_time: float


@dataclass(frozen=True)
class Itinerary:
    package: str
    legs: tuple[Leg, ...]
    total: float  # minutes from time 0 to arrival; inf if undeliverable

    @property
    def delivered(self) -> bool:
        return bool(self.legs)

    def route_string(self) -> str:
        if not self.legs:
            return "undeliverable"
        parts = [self.legs[0].board_depot]
        for leg in self.legs:
            parts.append(f"({leg.vehicle})")
            parts.append(leg.alight_depot)
        return "->".join(parts)


@dataclass
class DeliveryPlan:
    itineraries: list[Itinerary]
    occupancy: dict[str, float]
    total_cost: float  # rho-weighted arrival minutes over delivered packages
    feasible: bool
    undeliverable: list[str] = field(default_factory=list)
    trace: SolverTrace = field(default_factory=SolverTrace)
    paths: list[list[int]] = field(default_factory=list)  # chain-state indices

    def itinerary(self, package: str) -> Itinerary:
        for it in self.itineraries:
            if it.package == package:
                return it
        raise KeyError(package)

    @property
    def max_occupancy(self) -> float:
        return max(self.occupancy.values(), default=0.0)


def _itinerary(inst, space, package: int, path: list[int]) -> Itinerary:
    """``path`` holds chain-state indices (departures then terminals)."""
    legs = []
    D = len(space.departures)
    for s in path:
        if s >= D:
            break
        k, r = space.departures[s]
        v = inst.vehicles[k]
        legs.append(Leg(v.name, v.route[r], float(v.times[r]), v.route[r + 1], float(v.times[r + 1])))
    total = legs[-1].alight_time if legs else INF
    return Itinerary(inst.packages[package].name, tuple(legs), total)


def _occupancy_vector(inst, space, paths: dict[int, list[int]]) -> np.ndarray:
    occ = np.zeros(len(space.departures))
    for j, path in paths.items():
        for s in set(path):
            if s < len(space.departures):
                occ[s] += inst.weights[j]
    return occ


def _plan(inst, space, paths: dict[int, list[int]], feasible_tol: float | None, trace=None):
    occ = _occupancy_vector(inst, space, paths)
    its, undeliverable = [], []
    for j in range(len(inst.packages)):
        if j in paths:
            its.append(_itinerary(inst, space, j, paths[j]))
        else:
            its.append(Itinerary(inst.packages[j].name, (), INF))
            undeliverable.append(inst.packages[j].name)
    labels = [state_label(inst, space, space.departure_index(k)) for k in range(len(space.departures))]
    total = float(sum(inst.weights[j] * its[j].total for j in paths))
    feasible = True
    if feasible_tol is not None and inst.constrained:
        caps = _departure_caps(inst, space)
        feasible = bool(np.all(occ <= caps + feasible_tol))
    return DeliveryPlan(its, dict(zip(labels, occ.tolist())), total, feasible, undeliverable,
                        trace or SolverTrace(), [paths.get(j, []) for j in range(len(inst.packages))])


def _departure_caps(inst, space) -> np.ndarray:
    return np.array([inst.capacity[k] for k, _ in space.departures])


def _min_cost_path(costs: LayeredCosts, j: int, allowed: np.ndarray | None = None):
    """Backward DP for item ``j``; ties go to the lowest next-state index."""
    T = costs.steps
    step, start, final = costs.step[j], costs.start[j], costs.final[j]
    if allowed is not None:
        block = np.where(allowed, 0.0, INF)
        step, start = step + block[None, :], start + block
    V = [None] * (T + 1)
    V[T] = final
    for t in range(T - 1, 0, -1):
        V[t] = np.min(step + V[t + 1][None, :], axis=1)
    first = start + V[1] if T > 1 else start + final
    if not np.isfinite(first.min()):
        return None, INF
    s = int(np.argmin(first))
    path = [s]
    for t in range(1, T):
        s = int(np.argmin(step[s] + V[t + 1]))
        path.append(s)
    return path, float(first.min())


def solve_unconstrained(inst: LmdpInstance, horizon: int | None = None) -> DeliveryPlan:
    """Minimum-arrival-time itinerary per package by backward dynamic programming."""
    space = build_state_space(inst, horizon)
    costs = layered_costs(inst, space)
    paths = {}
    for j in range(len(inst.packages)):
        path, _ = _min_cost_path(costs, j)
        if path is not None:
            paths[j] = path
    return _plan(inst, space, paths, PenaltyConfig().epsilon_feasible)


# --- relaxed policy ---------------------------------------------------------


def gibbs_policy(
    inst: LmdpInstance,
    beta: float,
    beta_prime: float = 0.0,
    penalty: PenaltyConfig = PenaltyConfig(),
    fp: FixedPointConfig = FixedPointConfig(),
    space: LmdpStateSpace | None = None,
    packages=None,
):
    """Per-package stage policies on departure-states and terminals.

    Returns the chain solution (policy, log partition values, prices and
    occupancy per departure-state).  ``packages`` restricts the computation
    to deliverable packages; all must have at least one itinerary.
    """
    space = space or build_state_space(inst)
    packages = list(range(len(inst.packages))) if packages is None else list(packages)
    costs = layered_costs(inst, space, packages)
    priced = np.arange(len(space.departures))
    rho = inst.weights[packages]
    if inst.constrained:
        caps = _departure_caps(inst, space)
    else:
        caps, beta_prime = np.ones(priced.size), 0.0
    return solve_chain(costs, beta, beta_prime, rho, priced, caps, penalty, fp)


def vehicle_usage(inst: LmdpInstance, policy: ChainPolicy, space: LmdpStateSpace | None = None,
                  packages=None) -> np.ndarray:
    """Weighted occupancy of every departure-state."""
    space = space or build_state_space(inst)
    packages = list(range(len(inst.packages))) if packages is None else list(packages)
    return usage_of(policy, inst.weights[packages], np.arange(len(space.departures)))


def _viterbi(policy: ChainPolicy, item: int, dest: int, allowed: np.ndarray):
    """Most probable path of ``item`` avoiding states not ``allowed``."""
    with np.errstate(divide="ignore"):
        start = np.log(policy.start[item]) + np.where(allowed, 0.0, -INF)
        steps = [np.log(policy.step_for(t, item)) + np.where(allowed, 0.0, -INF)[None, :]
                 for t in range(1, policy.horizon)]
    T = policy.horizon
    best = [None] * (T + 1)
    best[T] = np.full(start.shape, -INF)
    best[T][dest] = 0.0
    for t in range(T - 1, 0, -1):
        best[t] = np.max(steps[t - 1] + best[t + 1][None, :], axis=1)
    first = start + best[1]
    if not np.isfinite(first.max()):
        return None, -INF
    s = int(np.argmax(first))
    path = [s]
    for t in range(1, T):
        s = int(np.argmax(steps[t - 1][s] + best[t + 1]))
        path.append(s)
    return path, float(first.max())


def default_schedule() -> AnnealSchedule:
    return AnnealSchedule(beta_min=1e-3, beta_max=10.0, alpha=1.5,
                          betap_min=1e-2, betap_max=1e4, alphap=2.0)


def anneal_lmdp(
    inst: LmdpInstance,
    schedule: AnnealSchedule | None = None,
    penalty: PenaltyConfig = PenaltyConfig(),
    fp: FixedPointConfig = FixedPointConfig(),
    *,
    unconstrained: bool = False,
    horizon: int | None = None,
) -> DeliveryPlan:
    """Capacity-constrained plan by nested beta / beta' annealing.

    If the minimum-time plan already respects every capacity it is returned
    as is.  Otherwise the annealed policy is rounded: packages in order of
    decreasing confidence take their most probable itinerary among
    departure-states with room left.  ``feasible`` reports whether the final
    occupancies respect the capacities within ``epsilon_feasible``.
    """
    base = solve_unconstrained(inst, horizon)
    if unconstrained or not inst.constrained:
        return base
    space = build_state_space(inst, horizon)
    caps = _departure_caps(inst, space)
    eps = penalty.epsilon_feasible
    if np.all(_occupancy_vector(inst, space, dict(enumerate(base.paths))) <= caps + eps):
        return base

    schedule = schedule or default_schedule()
    deliverable = [j for j, p in enumerate(base.paths) if p]
    rho = inst.weights[deliverable]
    costs = layered_costs(inst, space, deliverable)
    priced = np.arange(len(space.departures))
    trace = SolverTrace()
    sol = None
    u = None
    start = 0
    betaps = schedule.betaps()
    for beta in schedule.betas():
        last = start
        u = None
        for k in range(start, len(betaps)):
            betap = betaps[k]
            last = k
            sol = solve_chain(costs, beta, betap, rho, priced, caps, penalty, fp, u0=u, strict=False)
            if not sol.newton_converged:
                # Happens once prices are so large that the relaxed law is
                # numerically hard; the last iterate is kept.
                trace.flag("capacity prices not converged to tolerance; last iterate kept")
            u = sol.prices
            D = expected_cost(costs, sol.policy, rho)
            H = path_entropy(sol.policy, rho)
            slack = sol.usage - caps
            pen = penalty_value(slack, penalty.theta, penalty.exponent_clamp)
            trace.record(
                beta=beta,
                beta_prime=betap,
                free_energy=beta * D - H + betap * pen,
                distortion=D,
                penalty=pen,
                max_slack=float(slack.max()),
                distinct_or_max_occupancy=float(sol.usage.max()),
                inner_iterations=1,
            )
            if schedule.stop_when_feasible and slack.max() <= 0:
                break
        if schedule.betap_warm_start:
            start = last

    # Capacity-aware rounding of the annealed policy.
    D = len(space.departures)
    remaining = caps.copy()
    n_inner = space.size - space.n_packages
    dests = [space.terminal_index(inst.depots.index(inst.packages[j].destination)) - space.n_packages
             for j in deliverable]
    everything = np.ones(n_inner, dtype=bool)
    conf = [_viterbi(sol.policy, i, dests[i], everything)[1] for i in range(len(deliverable))]
    order = sorted(range(len(deliverable)), key=lambda i: (-conf[i], i))
    paths = {}
    for i in order:
        j = deliverable[i]
        allowed = np.ones(n_inner, dtype=bool)
        allowed[:D] = remaining >= inst.weights[j] - 1e-12
        path, _ = _viterbi(sol.policy, i, dests[i], allowed)
        if path is None:
            path, _ = _min_cost_path(costs, i, allowed)
        if path is None:
            path = _viterbi(sol.policy, i, dests[i], everything)[0]
            trace.flag(f"package {inst.packages[j].name} could not be placed within capacity")
        paths[j] = path
        for s in set(path):
            if s < D:
                remaining[s] -= inst.weights[j]
    return _plan(inst, space, paths, eps, trace)
