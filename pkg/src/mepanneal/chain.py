"""Gibbs distributions over fixed-length paths in a layered state graph.

An item i (a node, a package) starts outside the graph, takes a first step
into state s_1 at cost ``start[i, s_1]``, then ``steps - 1`` transitions with
cost ``step[s, s']`` and finally leaves from s_T at cost ``final[s_T]``.  The
relaxed policy puts weight proportional to

    exp(-beta * path_cost - sum_t u[s_t])

on each path, where ``u`` is a per-state price (zero on unpriced states).
Infinite costs are forbidden moves.  ``step`` and ``final`` may carry a
leading item axis when the allowed moves differ between items.

Everything is computed stage-wise: a backward log-partition sweep gives the
policy, a forward sweep gives visit marginals, and the same sweeps give the
first and second moments of the visit counts needed by the price solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core import (
    EmptySupportError,
    FixedPointConfig,
    PenaltyConfig,
    damped_fixed_point,
    log_sum_exp_rows,
    penalty_prices,
    solve_prices,
)


@dataclass(frozen=True)
class LayeredCosts:
    start: np.ndarray  # (N, S)
    step: np.ndarray  # (S, S) or (N, S, S)
    final: np.ndarray  # (S,) or (N, S)
    steps: int  # states visited per path

    @property
    def items(self) -> int:
        return self.start.shape[0]

    @property
    def states(self) -> int:
        return self.start.shape[1]

    @property
    def per_item(self) -> bool:
        return self.step.ndim == 3


@dataclass(frozen=True)
class ChainPolicy:
    """Stage-wise transition matrices; dead rows (no way out) are all zero."""

    start: np.ndarray  # (N, S)
    steps: np.ndarray  # (T-1, S, S) or (T-1, N, S, S)

    @property
    def horizon(self) -> int:
        return self.steps.shape[0] + 1

    @property
    def per_item(self) -> bool:
        return self.steps.ndim == 4

    def step_for(self, t: int, i: int) -> np.ndarray:
        """Transition matrix leaving stage ``t`` (1-based) for item ``i``."""
        return self.steps[t - 1, i] if self.per_item else self.steps[t - 1]


def log_weights(cost: np.ndarray, beta: float) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    out = np.full(cost.shape, -np.inf)
    ok = np.isfinite(cost)
    out[ok] = -beta * cost[ok]
    return out


def _normalize(logits: np.ndarray, lz: np.ndarray) -> np.ndarray:
    safe = np.where(np.isfinite(lz), lz, 0.0)
    P = np.exp(logits - safe[..., None])
    P[~np.isfinite(lz)] = 0.0
    return P


def backward(costs: LayeredCosts, beta: float, prices: np.ndarray | None = None):
    """Policy and per-item log partition values for given state prices.

    Returns ``(policy, log_z)``.  Raises ``EmptySupportError`` when some item
    has no finite-cost path at all.
    """
    S, T = costs.states, costs.steps
    u = np.zeros(S) if prices is None else np.asarray(prices, dtype=float)
    step_w = log_weights(costs.step, beta) - u
    lz = log_weights(costs.final, beta)
    mats = []
    for _ in range(T - 1):
        logits = step_w + lz[..., None, :]
        lz = log_sum_exp_rows(logits)
        mats.append(_normalize(logits, lz))
    mats.reverse()
    logits = log_weights(costs.start, beta) - u + lz
    lz0 = log_sum_exp_rows(logits)
    if np.any(~np.isfinite(lz0)):
        bad = np.flatnonzero(~np.isfinite(lz0)).tolist()
        raise EmptySupportError(f"no feasible path for items {bad}")
    shape = (0,) + ((costs.items, S, S) if costs.per_item else (S, S))
    steps = np.array(mats) if mats else np.zeros(shape)
    return ChainPolicy(_normalize(logits, lz0), steps), lz0


def marginals(policy: ChainPolicy) -> np.ndarray:
    """Per-item state marginals, shape (T, N, S); row t-1 is stage t."""
    mu = [policy.start]
    for k in range(policy.horizon - 1):
        Pk = policy.steps[k]
        if policy.per_item:
            mu.append(np.einsum("ns,nst->nt", mu[-1], Pk))
        else:
            mu.append(mu[-1] @ Pk)
    return np.array(mu)


def visit_moments(policy: ChainPolicy, rho: np.ndarray, priced: np.ndarray):
    """Expected visit counts per item (N x K) and ``sum_i rho_i E_i[n n^T]``.

    ``n_k`` counts the stages at which the path sits in state ``priced[k]``.
    """
    mu = marginals(policy)
    counts = mu.sum(axis=0)[:, priced]
    T = policy.horizon
    S = policy.start.shape[1]
    # V_t[a, b] = sum_{t' > t} P(s_t' = b | s_t = a)
    V = np.zeros((len(rho), S, S)) if policy.per_item else np.zeros((S, S))
    second = np.diag(rho @ mu[T - 1])
    eye = np.eye(S)
    for t in range(T - 1, 0, -1):
        Pt = policy.steps[t - 1]
        if policy.per_item:
            V = np.einsum("nab,nbc->nac", Pt, eye + V)
            cross = np.einsum("n,na,nab->ab", rho, mu[t - 1], V)
        else:
            V = Pt @ (eye + V)
            cross = (rho @ mu[t - 1])[:, None] * V
        second = second + np.diag(rho @ mu[t - 1]) + cross + cross.T
    return counts, second[np.ix_(priced, priced)]


def expected_cost(costs: LayeredCosts, policy: ChainPolicy, rho: np.ndarray) -> float:
    """``sum_i rho_i E_i[path cost]`` with 0 * inf taken as 0."""

    def masked(P, C):
        return np.where(P > 0, np.where(np.isfinite(C), C, 0.0), 0.0) * P

    mu = marginals(policy)
    per_item = masked(policy.start, costs.start).sum(axis=1)
    for t in range(1, policy.horizon):
        Pt = policy.steps[t - 1]
        if policy.per_item:
            row = masked(Pt, costs.step).sum(axis=2)
            per_item = per_item + np.einsum("ns,ns->n", mu[t - 1], row)
        else:
            per_item = per_item + mu[t - 1] @ masked(Pt, costs.step).sum(axis=1)
    fin = np.where(np.isfinite(costs.final), costs.final, 0.0)
    last = mu[-1] * fin if fin.ndim == 2 else mu[-1] * fin[None, :]
    return float(rho @ (per_item + last.sum(axis=1)))


def path_entropy(policy: ChainPolicy, rho: np.ndarray) -> float:
    """Entropy of the path law, by the chain rule over stages."""
    mu = marginals(policy)
    h = -xlogy(policy.start, policy.start).sum(axis=1)
    for t in range(1, policy.horizon):
        Pt = policy.steps[t - 1]
        row_h = -xlogy(Pt, Pt).sum(axis=-1)
        if policy.per_item:
            h = h + np.einsum("ns,ns->n", mu[t - 1], row_h)
        else:
            h = h + mu[t - 1] @ row_h
    return float(rho @ h)


def _lift(u: np.ndarray, priced: np.ndarray, S: int) -> np.ndarray:
    full = np.zeros(S)
    full[priced] = u
    return full


def moment_fn(costs: LayeredCosts, beta: float, rho: np.ndarray, priced: np.ndarray):
    """Callback for ``solve_prices``: prices on ``priced`` -> (log_z, counts, second)."""

    def moments(u):
        policy, lz = backward(costs, beta, _lift(u, priced, costs.states))
        counts, second = visit_moments(policy, rho, priced)
        return lz, counts, second

    return moments


@dataclass
class ChainSolution:
    policy: ChainPolicy
    log_z: np.ndarray
    prices: np.ndarray  # on priced states
    usage: np.ndarray  # on priced states
    newton_converged: bool


def usage_of(policy: ChainPolicy, rho: np.ndarray, priced: np.ndarray) -> np.ndarray:
    return rho @ marginals(policy).sum(axis=0)[:, priced]


def solve_chain(
    costs: LayeredCosts,
    beta: float,
    beta_prime: float,
    rho: np.ndarray,
    priced: np.ndarray,
    caps: np.ndarray,
    penalty: PenaltyConfig = PenaltyConfig(),
    fp: FixedPointConfig = FixedPointConfig(),
    u0: np.ndarray | None = None,
    strict: bool = True,
) -> ChainSolution:
    """Self-consistent penalised policy at fixed costs.

    Newton on the capacity prices first; if it stalls, the damped iteration
    on the usage vector takes over and may raise ``NoConvergenceError``.
    With ``strict=False`` the damped iteration is skipped and Newton's last
    iterate is returned with ``newton_converged=False``.
    """
    priced = np.asarray(priced, dtype=int)
    S = costs.states
    if beta_prime == 0 or priced.size == 0:
        policy, lz = backward(costs, beta)
        usage = usage_of(policy, rho, priced)
        return ChainSolution(policy, lz, np.zeros(priced.size), usage, True)
    moments = moment_fn(costs, beta, rho, priced)
    sol = solve_prices(moments, rho, caps, beta_prime, penalty, tol=fp.tol, u0=u0)

    if not sol.converged and not strict:
        policy, lz = backward(costs, beta, _lift(sol.prices, priced, S))
        return ChainSolution(policy, lz, sol.prices, usage_of(policy, rho, priced), False)
    if not sol.converged:

        def usage_map(c):
            u = penalty_prices(c, caps, beta_prime, penalty.theta, penalty.exponent_clamp)
            pol, _ = backward(costs, beta, _lift(u, priced, S))
            return usage_of(pol, rho, priced)

        usage, _ = damped_fixed_point(usage_map, sol.usage, fp)
        u = penalty_prices(usage, caps, beta_prime, penalty.theta, penalty.exponent_clamp)
        policy, lz = backward(costs, beta, _lift(u, priced, S))
        return ChainSolution(policy, lz, u, usage, False)
    policy, lz = backward(costs, beta, _lift(sol.prices, priced, S))
    return ChainSolution(policy, lz, sol.prices, usage_of(policy, rho, priced), sol.converged)
