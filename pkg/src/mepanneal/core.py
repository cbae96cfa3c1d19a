"""Shared numerical machinery for the annealing solvers.

Geometric ladders, the exponential capacity penalty, log-domain reductions,
damped fixed-point iteration, and a Newton solver for the capacity prices
that make the penalised Gibbs equations self-consistent.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np


class AnnealError(Exception):
    """Base class for solver errors."""


class InvalidParameterError(AnnealError, ValueError):
    pass


class InvalidInstanceError(AnnealError, ValueError):
    pass


class InfeasibleCapacitiesError(InvalidInstanceError):
    pass


class EmptySupportError(AnnealError, ValueError):
    pass


class TooLargeError(AnnealError, ValueError):
    pass


class NoConvergenceError(AnnealError, RuntimeError):
    """Raised when an iteration exhausts its budget.

    ``x`` holds the last iterate and ``iterations`` the number of steps taken,
    so callers can retry with a smaller damping or keep the partial result.
    """

    def __init__(self, message: str, x=None, iterations: int = 0):
        super().__init__(message)
        self.x = x
        self.iterations = iterations


@dataclass(frozen=True)
class AnnealSchedule:
    beta_min: float
    beta_max: float
    alpha: float
    betap_min: float = 1e-2
    betap_max: float = 1e3
    alphap: float = 2.0
    # Stop raising beta' once every soft constraint holds.
    stop_when_feasible: bool = True
    # Continue the beta' ladder from the last value instead of resetting it.
    betap_warm_start: bool = False

    def __post_init__(self):
        if not (0 < self.beta_min <= self.beta_max):
            raise InvalidParameterError("need 0 < beta_min <= beta_max")
        if not (0 < self.betap_min <= self.betap_max):
            raise InvalidParameterError("need 0 < betap_min <= betap_max")
        if self.alpha <= 1 or self.alphap <= 1:
            raise InvalidParameterError("annealing rates must exceed 1")

    def betas(self) -> list[float]:
        return geometric_ladder(self.beta_min, self.beta_max, self.alpha)

    def betaps(self) -> list[float]:
        return geometric_ladder(self.betap_min, self.betap_max, self.alphap)


@dataclass(frozen=True)
class PenaltyConfig:
    theta: float = 10.0
    exponent_clamp: float = 60.0
    epsilon_feasible: float = 0.01

    def __post_init__(self):
        if self.theta < 1:
            raise InvalidParameterError("theta must be >= 1")
        if self.epsilon_feasible <= 0:
            raise InvalidParameterError("epsilon_feasible must be positive")
        if self.exponent_clamp <= 0:
            raise InvalidParameterError("exponent_clamp must be positive")


@dataclass(frozen=True)
class FixedPointConfig:
    damping: float = 0.5
    tol: float = 1e-8
    max_iters: int = 500

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise InvalidParameterError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.max_iters < 1:
            raise InvalidParameterError("tol and max_iters must be positive")


def geometric_ladder(lo: float, hi: float, rate: float) -> list[float]:
    """Return ``lo, lo*rate, lo*rate**2, ...`` ending at the first value >= hi."""
    if lo <= 0 or rate <= 1:
        raise InvalidParameterError(f"need lo > 0 and rate > 1, got lo={lo}, rate={rate}")
    if hi < lo:
        raise InvalidParameterError(f"need lo <= hi, got lo={lo}, hi={hi}")
    if hi == lo:
        return [float(lo)]
    steps = math.ceil(math.log(hi / lo) / math.log(rate) - 1e-9)
    return [lo * rate**k for k in range(steps + 1)]


def _clamped_exponent(slacks, theta: float, clamp: float) -> np.ndarray:
    return np.clip(theta * np.asarray(slacks, dtype=float), -clamp, clamp)


def penalty_value(slacks, theta: float, clamp: float = 60.0) -> float:
    """Auxiliary cost ``sum_j exp(theta * slack_j)`` with clamped exponents."""
    return float(np.sum(np.exp(_clamped_exponent(slacks, theta, clamp))))


def penalty_gradient(slacks, theta: float, clamp: float = 60.0) -> np.ndarray:
    return theta * np.exp(_clamped_exponent(slacks, theta, clamp))


def penalty_prices(usage, caps, betap: float, theta: float, clamp: float = 60.0) -> np.ndarray:
    """Per-constraint price ``betap * theta * exp(theta * (usage - cap))``."""
    usage = np.asarray(usage, dtype=float)
    if betap == 0:
        return np.zeros_like(usage)
    return betap * penalty_gradient(usage - np.asarray(caps, dtype=float), theta, clamp)


def log_sum_exp(values) -> float:
    """Stable ``log(sum(exp(values)))``; ``-inf`` entries carry zero mass."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0 or not np.any(v > -np.inf):
        raise EmptySupportError("log_sum_exp of an empty support")
    m = v.max()
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise log-sum-exp that returns ``-inf`` for all ``-inf`` rows."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(s, axis=axis)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    lz = log_sum_exp_rows(logits)
    if np.any(~np.isfinite(lz)):
        raise EmptySupportError("softmax row without finite entries")
    return np.exp(logits - lz[..., None])


def damped_fixed_point(
    fmap: Callable[[np.ndarray], np.ndarray],
    init,
    cfg: FixedPointConfig = FixedPointConfig(),
) -> tuple[np.ndarray, int]:
    """Iterate ``x <- (1-d) x + d fmap(x)`` until ``|fmap(x) - x|_inf <= tol``.

    Returns the point and the number of map evaluations used.
    """
    x = np.asarray(init, dtype=float)
    for it in range(1, cfg.max_iters + 1):
        fx = np.asarray(fmap(x), dtype=float)
        if np.max(np.abs(fx - x), initial=0.0) <= cfg.tol:
            return x, it
        x = (1 - cfg.damping) * x + cfg.damping * fx
    raise NoConvergenceError(
        f"damped fixed point did not converge in {cfg.max_iters} iterations",
        x=x,
        iterations=cfg.max_iters,
    )


# --- capacity prices -------------------------------------------------------
#
# All three constrained problems share one structure.  For fixed geometry the
# relaxed policy is a Gibbs distribution over "paths" (a facility, a multi-hop
# route, an itinerary) whose log-weight is  -beta*cost - sum_k u_k n_k,  where
# n_k counts visits to constrained entity k and u_k is its price.  The penalised
# stationarity conditions say u_k = betap*theta*exp(theta*(C_k(u) - c_k)), with
# C_k the rho-weighted expected visit count.  These are the optimality
# conditions of the concave dual
#
#     Phi(u) = -sum_i rho_i log Z_i(u) - sum_k u_k (c_k + (log(u_k/(betap*theta)) - 1)/theta)
#
# whose gradient is C(u) - c - log(u/(betap*theta))/theta and whose Hessian is
# -Cov_rho(n) - diag(1/(theta*u)).  Newton steps in log(u) with a backtracking
# line search on Phi converge from any start.

MomentFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass
class PriceSolution:
    prices: np.ndarray
    usage: np.ndarray
    iterations: int
    converged: bool


def _dual_value(log_z, rho, u, caps, scale, theta):
    conj = u * (caps + (np.log(u / scale) - 1.0) / theta)
    return -float(rho @ log_z) - float(conj.sum())


def solve_prices(
    moments: MomentFn,
    rho: np.ndarray,
    caps: np.ndarray,
    betap: float,
    penalty: PenaltyConfig,
    tol: float = 1e-8,
    max_iters: int = 100,
    u0: np.ndarray | None = None,
) -> PriceSolution:
    """Find prices ``u`` with ``u = betap*theta*exp(theta*(C(u) - caps))``.

    ``moments(u)`` must return ``(log_z, counts, second)``: per-item log
    partition values, per-item expected visit counts (items x K) and the
    rho-weighted second moment ``sum_i rho_i E_i[n n^T]`` (K x K).
    """
    theta, clamp = penalty.theta, penalty.exponent_clamp
    caps = np.asarray(caps, dtype=float)
    rho = np.asarray(rho, dtype=float)
    K = caps.size
    if betap == 0:
        _, counts, _ = moments(np.zeros(K))
        return PriceSolution(np.zeros(K), rho @ counts, 0, True)
    scale = betap * theta
    lo, hi = math.log(scale) - clamp, math.log(scale) + clamp

    if u0 is None:
        _, counts, _ = moments(np.zeros(K))
        v = np.log(scale) + np.clip(theta * (rho @ counts - caps), -clamp, clamp)
    else:
        v = np.log(np.clip(u0, math.exp(lo), math.exp(hi)))
    u = np.exp(v)
    log_z, counts, second = moments(u)
    usage = rho @ counts
    phi = _dual_value(log_z, rho, u, caps, scale, theta)

    it = 0
    for it in range(1, max_iters + 1):
        target = scale * np.exp(np.clip(theta * (usage - caps), -clamp, clamp))
        # Residual measured relative to the price scale: logits carry roundoff
        # proportional to |u|, so an absolute test is unattainable for large u.
        if np.max(np.abs(target - u)) <= 0.1 * tol * max(1.0, float(u.max())):
            return PriceSolution(u, usage, it, True)
        grad = usage - caps - (v - math.log(scale)) / theta
        cov = second - counts.T @ (rho[:, None] * counts)
        hess = -cov - np.diag(1.0 / (theta * u))
        step_u = -np.linalg.solve(hess, grad)
        dv = step_u / u
        big = np.max(np.abs(dv))
        if big > 5.0:
            dv *= 5.0 / big
        slope = float((u * grad) @ dv)
        gnorm = float(np.max(np.abs(grad)))
        t = 1.0
        accepted = False
        while t >= 1e-8:
            v_new = np.clip(v + t * dv, lo - 5.0, hi + 5.0)
            u_new = np.exp(v_new)
            lz_new, c_new, s_new = moments(u_new)
            phi_new = _dual_value(lz_new, rho, u_new, caps, scale, theta)
            if phi_new >= phi + 1e-4 * t * slope:
                accepted = True
                break
            if t == 1.0 and phi_new >= phi - 1e-12 * max(1.0, abs(phi)):
                # Quadratic regime: Phi may be flat to working precision
                # while the gradient still contracts.
                g_new = (c_new.T @ rho) - caps - (v_new - math.log(scale)) / theta
                if np.max(np.abs(g_new)) < 0.5 * gnorm:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # No ascent left at working precision.
            break
        v, u, log_z, counts, second = v_new, u_new, lz_new, c_new, s_new
        usage = rho @ counts
        phi = phi_new
    target = scale * np.exp(np.clip(theta * (usage - caps), -clamp, clamp))
    return PriceSolution(u, usage, it, bool(np.max(np.abs(target - u)) <= tol * max(1.0, float(u.max()))))
