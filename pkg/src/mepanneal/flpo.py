"""Facility location with path optimisation, with facility capacities.

Every node routes to a common destination through a path of exactly M steps,
each step a facility or the destination itself (a path that reaches the
destination early idles there at zero cost).  Step costs are squared
distances.  The relaxed path law factorises into stage-wise transition
matrices; a facility's usage counts the probability mass entering it at any
stage, and capacities bound that usage through the exponential penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .chain import (
    ChainPolicy,
    LayeredCosts,
    backward,
    expected_cost,
    marginals,
    path_entropy,
    solve_chain,
    usage_of,
)
from .core import (
    AnnealSchedule,
    FixedPointConfig,
    InvalidInstanceError,
    PenaltyConfig,
    penalty_prices,
    penalty_value,
)
from .flp import diameter, distinct_count
from .instances import FlpoInstance
from .trace import SolverTrace

PathPolicy = ChainPolicy


@dataclass(frozen=True)
class FlpoMatrices:
    A: np.ndarray
    B: np.ndarray
    Xbar: np.ndarray
    C: np.ndarray


@dataclass
class FlpoSolution:
    locations: np.ndarray
    paths: np.ndarray  # (N, M) step indices; M is the destination
    cost: float
    usage: np.ndarray
    feasible: bool
    trace: SolverTrace
    policy: PathPolicy
    beta: float = 0.0
    beta_prime: float = 0.0
    prices: np.ndarray = field(default_factory=lambda: np.zeros(0))
    soft_locations: np.ndarray = field(default_factory=lambda: np.zeros(0))


def step_cost(inst: FlpoInstance, Y: np.ndarray) -> LayeredCosts:
    """Squared-distance stage costs over the steps (f_1, ..., f_M, destination)."""
    pts = np.vstack([np.asarray(Y, dtype=float), inst.destination[None, :]])
    between = cdist(pts, pts, "sqeuclidean")
    between[-1, -1] = 0.0
    return LayeredCosts(
        start=cdist(inst.nodes, pts, "sqeuclidean"),
        step=between,
        final=between[:, -1].copy(),
        steps=inst.facility_count,
    )


def backward_policy(
    costs: LayeredCosts,
    usage,
    beta: float,
    beta_prime: float = 0.0,
    penalty: PenaltyConfig = PenaltyConfig(),
    capacities=None,
):
    """Stage policies for facility prices set from ``usage``; returns (policy, log_z).

    Entering facility j costs an extra ``beta'*theta*exp(theta*(usage_j - w_j))``
    on top of ``beta`` times the squared distance.  The destination is unpriced.
    """
    M = costs.states - 1
    prices = np.zeros(M + 1)
    if beta_prime and capacities is not None:
        prices[:M] = penalty_prices(usage, capacities, beta_prime,
                                    penalty.theta, penalty.exponent_clamp)
    return backward(costs, beta, prices)


def path_probability(policy: PathPolicy, node: int, path) -> float:
    path = list(path)
    if len(path) != policy.horizon:
        raise InvalidInstanceError(f"path must have {policy.horizon} steps")
    p = policy.start[node, path[0]]
    for t in range(1, len(path)):
        p *= policy.step_for(t, node)[path[t - 1], path[t]]
    return float(p)


def facility_usage_flpo(inst: FlpoInstance, policy: PathPolicy) -> np.ndarray:
    return usage_of(policy, inst.weights, np.arange(inst.facility_count))


def assemble_matrices(inst: FlpoInstance, policy: PathPolicy) -> FlpoMatrices:
    """Coefficients of the stationarity system ``(2A - B) Y = Xbar + C``.

    Built from forward stage marginals: A holds the mass at each facility over
    all stages, B the facility-to-facility transition masses in both
    directions, Xbar the first-hop node mass, C every edge between a facility
    and the destination times the destination point.
    """
    M = inst.facility_count
    rho = inst.weights
    mu = marginals(policy)
    m = np.einsum("n,tns->ts", rho, mu)
    A = np.diag(m[:, :M].sum(axis=0))
    B = np.zeros((M, M))
    dest_mass = m[-1, :M].copy()
    for k in range(1, M):
        W = m[k - 1][:, None] * policy.steps[k - 1]
        B += W[:M, :M] + W[:M, :M].T
        dest_mass += W[:M, M] + W[M, :M]
    Xbar = (rho[:, None] * policy.start[:, :M]).T @ inst.nodes
    C = dest_mass[:, None] * inst.destination[None, :]
    return FlpoMatrices(A, B, Xbar, C)


def location_update(
    matrices: FlpoMatrices,
    inst: FlpoInstance,
    previous: np.ndarray | None = None,
    trace: SolverTrace | None = None,
    reg: float = 1e-10,
) -> np.ndarray:
    """Solve ``(2A - B) Y = Xbar + C`` for all coordinates at once.

    A facility without mass makes the system singular; then ``reg * I`` is
    added, pulling unused facilities toward ``previous`` (or the origin).
    """
    K = 2 * matrices.A - matrices.B
    rhs = matrices.Xbar + matrices.C
    if np.min(np.diag(matrices.A)) > 1e-12 and np.linalg.cond(K) < 1e12:
        return np.linalg.solve(K, rhs)
    if trace is not None:
        trace.flag("singular location system regularised")
    prev = np.zeros_like(rhs) if previous is None else np.asarray(previous, dtype=float)
    return np.linalg.solve(K + reg * np.eye(len(K)), rhs + reg * prev)


def distortion_flpo(inst: FlpoInstance, Y: np.ndarray, policy: PathPolicy) -> float:
    return expected_cost(step_cost(inst, Y), policy, inst.weights)


def free_energy_flpo(
    inst: FlpoInstance,
    Y: np.ndarray,
    policy: PathPolicy,
    beta: float,
    beta_prime: float = 0.0,
    penalty: PenaltyConfig = PenaltyConfig(),
) -> float:
    f = beta * distortion_flpo(inst, Y, policy) - path_entropy(policy, inst.weights)
    if beta_prime and inst.constrained:
        slack = facility_usage_flpo(inst, policy) - inst.capacities
        f += beta_prime * penalty_value(slack, penalty.theta, penalty.exponent_clamp)
    return f


def _argmax_prefer_last(P: np.ndarray) -> np.ndarray:
    """Row argmax; an exact tie with the last column goes to the last column."""
    idx = np.argmax(P, axis=-1)
    last = P[..., -1] == np.max(P, axis=-1)
    return np.where(last, P.shape[-1] - 1, idx)


def harden_policy(policy: PathPolicy) -> PathPolicy:
    """One-hot stage matrices from the stage-wise argmax.

    Ties go to the lowest facility index, except that the destination wins
    any exact tie it takes part in.
    """
    S = policy.start.shape[1]
    eye = np.eye(S)
    return ChainPolicy(eye[_argmax_prefer_last(policy.start)],
                       eye[_argmax_prefer_last(policy.steps)])


def hard_paths(policy: PathPolicy) -> np.ndarray:
    hard = harden_policy(policy)
    cur = np.argmax(hard.start, axis=1)
    out = [cur]
    for t in range(1, hard.horizon):
        cur = np.argmax(hard.step_for(t, 0)[cur], axis=1)
        out.append(cur)
    return np.stack(out, axis=1)


def path_cost(inst: FlpoInstance, Y: np.ndarray, node: int, path) -> float:
    pts = np.vstack([Y, inst.destination[None, :]])
    seq = [inst.nodes[node]] + [pts[s] for s in path] + [inst.destination]
    return float(sum(np.sum((a - b) ** 2) for a, b in zip(seq, seq[1:])))


def _centroid_scale(inst: FlpoInstance) -> float:
    pts = np.vstack([inst.nodes, inst.destination[None, :]])
    xc = pts - pts.mean(axis=0)
    lam = float(np.linalg.eigvalsh(xc.T @ xc / len(pts))[-1])
    return 1.0 / (2.0 * lam) if lam > 1e-300 else 1.0


def default_schedule(inst: FlpoInstance) -> AnnealSchedule:
    return AnnealSchedule(beta_min=min(1e-3 * _centroid_scale(inst), 1e3), beta_max=1e3,
                          alpha=1.1, betap_min=1e-2, betap_max=1e3, alphap=2.0)


def _settle(inst, Y, beta, betap, penalty, fp, max_alternations, tol_abs, trace, constrained):
    priced = np.arange(inst.facility_count)
    caps = inst.capacities if constrained else np.zeros(0)
    bp = betap if constrained else 0.0
    u = None
    it = 0
    for it in range(1, max_alternations + 1):
        sol = solve_chain(step_cost(inst, Y), beta, bp, inst.weights, priced, caps,
                          penalty, fp, u0=u)
        u = sol.prices if bp else None
        Y_new = location_update(assemble_matrices(inst, sol.policy), inst, previous=Y, trace=trace)
        shift = float(np.max(np.abs(Y_new - Y)))
        Y = Y_new
        if shift <= tol_abs:
            break
    sol = solve_chain(step_cost(inst, Y), beta, bp, inst.weights, priced, caps, penalty, fp, u0=u)
    return Y, sol, it


def anneal_flpo(
    inst: FlpoInstance,
    schedule: AnnealSchedule | None = None,
    penalty: PenaltyConfig = PenaltyConfig(),
    fp: FixedPointConfig = FixedPointConfig(),
    seed: int = 0,
    *,
    unconstrained: bool = False,
    max_alternations: int = 200,
    location_tol: float = 1e-7,
    split_noise: float = 1e-4,
    distinct_tol: float = 1e-3,
) -> FlpoSolution:
    """Nested beta / beta' annealing, alternating policy and location updates."""
    schedule = schedule or default_schedule(inst)
    constrained = inst.constrained and not unconstrained
    rng = np.random.default_rng(seed)
    scale = diameter(np.vstack([inst.nodes, inst.destination[None, :]])) or 1.0
    M = inst.facility_count
    Y = np.tile(inst.weights @ inst.nodes, (M, 1))
    trace = SolverTrace()
    betaps = schedule.betaps() if constrained else [0.0]
    start = 0
    beta = betap = 0.0
    sol = None

    for beta in schedule.betas():
        Y = Y + rng.normal(scale=split_noise * scale, size=Y.shape)
        last = start
        for k in range(start, len(betaps)):
            betap = betaps[k]
            last = k
            Y, sol, iters = _settle(inst, Y, beta, betap, penalty, fp, max_alternations,
                                    location_tol * scale, trace, constrained)
            D = distortion_flpo(inst, Y, sol.policy)
            H = path_entropy(sol.policy, inst.weights)
            if constrained:
                slack = sol.usage - inst.capacities
                pen = penalty_value(slack, penalty.theta, penalty.exponent_clamp)
                max_slack = float(slack.max())
            else:
                pen, max_slack = 0.0, float("nan")
            trace.record(
                beta=beta,
                beta_prime=betap,
                free_energy=beta * D - H + betap * pen,
                distortion=D,
                penalty=pen,
                max_slack=max_slack,
                distinct_or_max_occupancy=distinct_count(Y, distinct_tol * scale),
                inner_iterations=iters,
            )
            if constrained and schedule.stop_when_feasible and max_slack <= 0:
                break
        if schedule.betap_warm_start:
            start = last

    hard = harden_policy(sol.policy)
    Y_hard = location_update(assemble_matrices(inst, hard), inst, previous=Y, trace=trace)
    paths = hard_paths(hard)
    cost = float(sum(inst.weights[i] * path_cost(inst, Y_hard, i, paths[i]) for i in range(inst.n)))
    usage = facility_usage_flpo(inst, hard)
    feasible = True
    if constrained:
        feasible = bool(np.all(usage <= inst.capacities + penalty.epsilon_feasible))
    return FlpoSolution(
        locations=Y_hard,
        paths=paths,
        cost=cost,
        usage=usage,
        feasible=feasible,
        trace=trace,
        policy=sol.policy,
        beta=beta,
        beta_prime=betap,
        prices=sol.prices,
        soft_locations=Y,
    )
