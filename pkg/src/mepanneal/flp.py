"""Facility location by deterministic annealing, with capacity limits.

Soft associations p(j|i) follow a Gibbs law in the squared distance.  When
facilities carry capacities c_j on their usage p_j = sum_i rho_i p(j|i), the
exponential auxiliary cost sum_j exp(theta (p_j - c_j)) enters the free energy
with multiplier beta', and the associations become self-consistent through
the usage vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import xlogy

from .core import (
    AnnealSchedule,
    FixedPointConfig,
    InvalidInstanceError,
    PenaltyConfig,
    damped_fixed_point,
    log_sum_exp_rows,
    penalty_prices,
    penalty_value,
    solve_prices,
)
from .instances import FlpInstance, _ArrayEq
from .trace import SolverTrace


@dataclass(frozen=True, eq=False)
class FlpState(_ArrayEq):
    locations: np.ndarray
    associations: np.ndarray


@dataclass
class FlpSolution:
    locations: np.ndarray
    assignment: np.ndarray
    cost: float
    usage: np.ndarray
    feasible: bool
    trace: SolverTrace
    associations: np.ndarray
    beta: float = 0.0
    beta_prime: float = 0.0
    prices: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # Locations the soft associations were computed against.
    soft_locations: np.ndarray = field(default_factory=lambda: np.zeros(0))


# --- geometry helpers ------------------------------------------------------


def sq_distances(nodes: np.ndarray, locations: np.ndarray) -> np.ndarray:
    return cdist(nodes, locations, "sqeuclidean")


def diameter(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(pdist(points).max())


def distinct_count(locations: np.ndarray, tol: float) -> int:
    """Number of groups of locations closer than ``tol`` (single linkage)."""
    if len(locations) < 2:
        return len(locations)
    adjacency = squareform(pdist(locations)) <= tol
    return int(connected_components(adjacency, directed=False)[0])


def weighted_centroid(inst: FlpInstance) -> np.ndarray:
    return inst.weights @ inst.nodes


# --- free-energy terms -----------------------------------------------------


def distortion(inst: FlpInstance, state: FlpState) -> float:
    d = sq_distances(inst.nodes, state.locations)
    return float(inst.weights @ np.sum(state.associations * d, axis=1))


def entropy(inst: FlpInstance, state: FlpState) -> float:
    return float(-inst.weights @ np.sum(xlogy(state.associations, state.associations), axis=1))


def facility_usage(inst: FlpInstance, associations: np.ndarray) -> np.ndarray:
    return inst.weights @ associations


def free_energy(
    inst: FlpInstance,
    state: FlpState,
    beta: float,
    beta_prime: float = 0.0,
    penalty: PenaltyConfig = PenaltyConfig(),
) -> float:
    """``beta*D - H``, plus ``beta' * sum exp(theta*slack)`` when capacities exist."""
    f = beta * distortion(inst, state) - entropy(inst, state)
    if beta_prime and inst.constrained:
        slack = facility_usage(inst, state.associations) - inst.capacities
        f += beta_prime * penalty_value(slack, penalty.theta, penalty.exponent_clamp)
    return f


# --- association updates ---------------------------------------------------


def gibbs_unconstrained(inst: FlpInstance, locations: np.ndarray, beta: float) -> np.ndarray:
    logits = -beta * sq_distances(inst.nodes, locations)
    return np.exp(logits - log_sum_exp_rows(logits)[:, None])


def constrained_gibbs_map(
    inst: FlpInstance,
    locations: np.ndarray,
    beta: float,
    beta_prime: float,
    penalty: PenaltyConfig = PenaltyConfig(),
):
    """The self-map P -> Gibbs(P) whose fixed point is the penalised association."""
    base = -beta * sq_distances(inst.nodes, locations)

    def fmap(P):
        u = penalty_prices(facility_usage(inst, P), inst.capacities, beta_prime,
                           penalty.theta, penalty.exponent_clamp)
        logits = base - u[None, :]
        return np.exp(logits - log_sum_exp_rows(logits)[:, None])

    return fmap


def gibbs_residual(inst, locations, P, beta, beta_prime, penalty=PenaltyConfig()) -> float:
    fmap = constrained_gibbs_map(inst, locations, beta, beta_prime, penalty)
    return float(np.max(np.abs(fmap(P) - P)))


def _moments(inst: FlpInstance, base: np.ndarray):
    rho = inst.weights

    def moments(u):
        logits = base - u[None, :]
        lz = log_sum_exp_rows(logits)
        P = np.exp(logits - lz[:, None])
        return lz, P, np.diag(rho @ P)

    return moments


def _gibbs_with_prices(inst, locations, beta, beta_prime, penalty, fp, u0=None):
    base = -beta * sq_distances(inst.nodes, locations)
    if beta_prime == 0 or not inst.constrained:
        P = np.exp(base - log_sum_exp_rows(base)[:, None])
        return P, np.zeros(inst.facility_count)
    moments = _moments(inst, base)
    sol = solve_prices(moments, inst.weights, inst.capacities, beta_prime, penalty,
                       tol=fp.tol, u0=u0)
    _, P, _ = moments(sol.prices)
    if not sol.converged:
        fmap = constrained_gibbs_map(inst, locations, beta, beta_prime, penalty)
        P, _ = damped_fixed_point(fmap, P, fp)
        u = penalty_prices(facility_usage(inst, P), inst.capacities, beta_prime,
                           penalty.theta, penalty.exponent_clamp)
        return P, u
    return P, sol.prices


def gibbs_constrained(
    inst: FlpInstance,
    locations: np.ndarray,
    beta: float,
    beta_prime: float,
    penalty: PenaltyConfig = PenaltyConfig(),
    fp: FixedPointConfig = FixedPointConfig(),
) -> np.ndarray:
    """Associations solving the capacity-penalised Gibbs equations at fixed locations.

    The fixed point is located through the dual capacity prices (Newton); the
    damped iteration of ``constrained_gibbs_map`` is the fallback and raises
    ``NoConvergenceError`` if it fails too.
    """
    if not inst.constrained:
        raise InvalidInstanceError("gibbs_constrained needs capacities")
    return _gibbs_with_prices(inst, locations, beta, beta_prime, penalty, fp)[0]


def centroid_update(
    inst: FlpInstance,
    associations: np.ndarray,
    previous: np.ndarray | None = None,
    trace: SolverTrace | None = None,
) -> np.ndarray:
    """Weighted means ``sum_i rho_i p(j|i) x_i / sum_i rho_i p(j|i)``.

    Facilities with no mass keep their ``previous`` location.
    """
    wp = inst.weights[:, None] * associations
    mass = wp.sum(axis=0)
    empty = mass < 1e-280
    Y = (wp.T @ inst.nodes) / np.where(empty, 1.0, mass)[:, None]
    if np.any(empty):
        if previous is None:
            raise InvalidInstanceError("zero-mass facility and no previous location")
        Y[empty] = previous[empty]
        if trace is not None:
            trace.flag("zero-mass facility held at previous location")
    return Y


def critical_beta(inst: FlpInstance, indices=None, weights=None) -> float:
    """Temperature at which a facility serving ``indices`` splits: 1/(2 lambda_max)."""
    idx = np.arange(inst.n) if indices is None else np.asarray(indices)
    if idx.size == 0:
        raise InvalidInstanceError("cluster must be nonempty")
    x = inst.nodes[idx]
    w = inst.weights[idx] if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    xc = x - w @ x
    cov = (w[:, None] * xc).T @ xc
    lam = float(np.linalg.eigvalsh(cov)[-1])
    if lam <= 1e-300:
        return float("inf")
    return 1.0 / (2.0 * lam)


def harden(inst: FlpInstance, associations: np.ndarray, locations: np.ndarray):
    """Argmax assignment (ties to the lowest index) and its weighted cost."""
    assignment = np.argmax(associations, axis=1)
    d = np.sum((inst.nodes - locations[assignment]) ** 2, axis=1)
    return assignment, float(inst.weights @ d)


def default_schedule(inst: FlpInstance) -> AnnealSchedule:
    bcr = critical_beta(inst)
    beta_min = 1e-3 * bcr if np.isfinite(bcr) else 1e-3
    return AnnealSchedule(beta_min=min(beta_min, 1e3), beta_max=1e3, alpha=1.1,
                          betap_min=1e-2, betap_max=1e3, alphap=2.0)


# --- annealing -------------------------------------------------------------


def _settle(inst, Y, beta, beta_prime, penalty, fp, max_alternations, tol_abs, trace):
    """Alternate association and location updates at fixed (beta, beta')."""
    u = None
    it = 0
    for it in range(1, max_alternations + 1):
        P, u = _gibbs_with_prices(inst, Y, beta, beta_prime, penalty, fp, u0=u)
        Y_new = centroid_update(inst, P, previous=Y, trace=trace)
        shift = float(np.max(np.abs(Y_new - Y)))
        Y = Y_new
        if shift <= tol_abs:
            break
    P, u = _gibbs_with_prices(inst, Y, beta, beta_prime, penalty, fp, u0=u)
    return Y, P, u, it


def _relabel(inst, Y, P, u, beta, beta_prime, penalty, fp, settle):
    """Try swapping the locations of facilities with different capacities.

    Facilities with unequal capacities are not interchangeable, so right after
    a split the branch picked by the noise may be the worse one.  Returns the
    labelling with the lowest penalised free energy (ties keep the current).
    """
    best = (free_energy(inst, FlpState(Y, P), beta, beta_prime, penalty), Y, P, u)
    M = inst.facility_count
    for a in range(M):
        for b in range(a + 1, M):
            if inst.capacities[a] == inst.capacities[b]:
                continue
            Ys = Y.copy()
            Ys[[a, b]] = Y[[b, a]]
            Ys, Ps, us, _ = settle(Ys)
            f = free_energy(inst, FlpState(Ys, Ps), beta, beta_prime, penalty)
            if f < best[0] - 1e-12 * max(1.0, abs(best[0])):
                best = (f, Ys, Ps, us)
    return best[1:]


def anneal_flp(
    inst: FlpInstance,
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
) -> FlpSolution:
    """Deterministic annealing over the beta ladder with an inner beta' ladder.

    All facilities start at the weighted centroid.  Before each beta step the
    locations receive seeded Gaussian noise (``split_noise`` x data diameter)
    so that coincident facilities can separate at phase transitions.
    """
    schedule = schedule or default_schedule(inst)
    constrained = inst.constrained and not unconstrained
    rng = np.random.default_rng(seed)
    scale = diameter(inst.nodes) or 1.0
    M = inst.facility_count
    Y = np.tile(weighted_centroid(inst), (M, 1))
    trace = SolverTrace()
    betaps = schedule.betaps() if constrained else [0.0]
    start = 0
    P = np.full((inst.n, M), 1.0 / M)
    u = np.zeros(M)
    beta = betap = 0.0
    groups = 1

    for beta in schedule.betas():
        Y = Y + rng.normal(scale=split_noise * scale, size=Y.shape)
        last = start
        for k in range(start, len(betaps)):
            betap = betaps[k]
            last = k
            Y, P, u, iters = _settle(inst, Y, beta, betap, penalty, fp,
                                     max_alternations, location_tol * scale, trace)
            state = FlpState(Y, P)
            D = distortion(inst, state)
            usage = facility_usage(inst, P)
            if constrained:
                slack = usage - inst.capacities
                pen = penalty_value(slack, penalty.theta, penalty.exponent_clamp)
                max_slack = float(slack.max())
            else:
                pen, max_slack = 0.0, float("nan")
            trace.record(
                beta=beta,
                beta_prime=betap,
                free_energy=beta * D - entropy(inst, state) + betap * pen,
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
        now = distinct_count(Y, distinct_tol * scale)
        if constrained and now > groups:
            def settle(Y0, beta=beta, betap=betap):
                return _settle(inst, Y0, beta, betap, penalty, fp, max_alternations,
                               location_tol * scale, trace)

            Y_old = Y
            Y, P, u = _relabel(inst, Y, P, u, beta, betap, penalty, fp, settle)
            if Y is not Y_old:
                trace.flag(f"facility labels swapped after split at beta={beta:.6g}")
        groups = now

    assignment, _ = harden(inst, P, Y)
    onehot = np.eye(M)[assignment]
    Y_hard = centroid_update(inst, onehot, previous=Y)
    _, cost = harden(inst, onehot, Y_hard)
    usage = facility_usage(inst, onehot)
    feasible = True
    if constrained:
        feasible = bool(np.all(usage <= inst.capacities + penalty.epsilon_feasible))
    return FlpSolution(
        locations=Y_hard,
        assignment=assignment,
        cost=cost,
        usage=usage,
        feasible=feasible,
        trace=trace,
        associations=P,
        beta=beta,
        beta_prime=betap,
        prices=u,
        soft_locations=Y,
    )
