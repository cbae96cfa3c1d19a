"""Exhaustive-search references.

These routines re-derive costs, path laws and timetable semantics from the
instance data alone and never call into the solvers, so agreement between the
two is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import TooLargeError
from .instances import FlpInstance, FlpoInstance, LmdpInstance

FLP_LIMIT = 10**7
FLPO_LIMIT = 10**6
LMDP_LIMIT = 10**6


@dataclass
class OracleReport:
    value: float
    witness: Any
    searched: int
    elapsed: float
    feasible: bool = True


# --- FLP ------------------------------------------------------------------


def assignment_cost(inst: FlpInstance, assignment) -> float:
    """Weighted squared error of a hard assignment with per-cluster weighted means."""
    a = np.asarray(assignment)
    total = 0.0
    for j in range(inst.facility_count):
        members = a == j
        if not members.any():
            continue
        w = inst.weights[members]
        x = inst.nodes[members]
        if w.sum() == 0:
            continue
        mean = (w @ x) / w.sum()
        total += float(w @ np.sum((x - mean) ** 2, axis=1))
    return total


def oracle_flp(inst: FlpInstance, capacity_mode: bool = True, chunk: int = 200_000) -> OracleReport:
    """Minimum over all M**N assignments; ties keep the lexicographically first."""
    t0 = time.perf_counter()
    N, M = inst.n, inst.facility_count
    total = M**N
    if total > FLP_LIMIT:
        raise TooLargeError(f"M**N = {total} exceeds the limit {FLP_LIMIT}")
    rho, X = inst.weights, inst.nodes
    base = float(rho @ np.sum(X**2, axis=1))
    caps = inst.capacities if (capacity_mode and inst.constrained) else None
    powers = M ** np.arange(N - 1, -1, -1)
    best, best_code = math.inf, -1
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(lo + chunk, total))
        digits = (codes[:, None] // powers[None, :]) % M  # (C, N)
        value = np.full(len(codes), base)
        ok = np.ones(len(codes), dtype=bool)
        for j in range(M):
            mask = (digits == j) * rho[None, :]
            W = mask.sum(axis=1)
            S = mask @ X
            nz = W > 0
            value[nz] -= np.sum(S[nz] ** 2, axis=1) / W[nz]
            if caps is not None:
                ok &= W <= caps[j] + 1e-12
        if not ok.any():
            continue
        value[~ok] = math.inf
        m = value.min()
        if m < best - 1e-12 * max(1.0, abs(best) if math.isfinite(best) else 1.0):
            k = int(np.flatnonzero(value <= m + 1e-12 * max(1.0, abs(m)))[0])
            best, best_code = float(value[k]), int(codes[k])
    elapsed = time.perf_counter() - t0
    if best_code < 0:
        return OracleReport(math.inf, None, total, elapsed, feasible=False)
    witness = (best_code // powers) % M
    return OracleReport(best, witness, total, elapsed)


# --- FLPO -----------------------------------------------------------------


@dataclass
class PathLaw:
    paths: np.ndarray  # (P, M) step indices, M = destination
    probs: np.ndarray  # (N, P)
    costs: np.ndarray  # (N, P) squared-distance path costs

    def usage(self, rho: np.ndarray, m: int) -> np.ndarray:
        """Weighted expected number of visits to every facility."""
        visits = np.stack([(self.paths == j).sum(axis=1) for j in range(m)], axis=1)
        return rho @ self.probs @ visits

    def conditional(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        """First-step law and stage transition laws of one node's path distribution.

        Entry ``[k][a, b]`` of the second array is P(step k+2 = b | step k+1 = a);
        rows for unreachable ``a`` are zero.
        """
        M = self.paths.shape[1]
        S = M + 1
        p = self.probs[node]
        first = np.zeros(S)
        np.add.at(first, self.paths[:, 0], p)
        trans = np.zeros((M - 1, S, S))
        for k in range(M - 1):
            joint = np.zeros((S, S))
            np.add.at(joint, (self.paths[:, k], self.paths[:, k + 1]), p)
            row = joint.sum(axis=1, keepdims=True)
            trans[k] = np.divide(joint, row, out=np.zeros_like(joint), where=row > 0)
        return first, trans


def _all_paths(M: int) -> np.ndarray:
    count = (M + 1) ** M
    if count > FLPO_LIMIT:
        raise TooLargeError(f"(M+1)**M = {count} exceeds the limit {FLPO_LIMIT}")
    return np.array(list(itertools.product(range(M + 1), repeat=M)), dtype=int).reshape(count, M)


def oracle_flpo_paths(
    inst: FlpoInstance,
    Y,
    beta: float,
    beta_prime: float = 0.0,
    theta: float = 10.0,
    usage=None,
    clamp: float = 60.0,
) -> PathLaw:
    """Path law by literal summation over all (M+1)**M paths of every node.

    Facility prices come from ``usage`` exactly as in the penalised weights:
    ``beta' * theta * exp(theta * (usage_j - w_j))``, charged on entering f_j.
    """
    M = inst.facility_count
    paths = _all_paths(M)
    pts = np.vstack([np.asarray(Y, dtype=float), inst.destination[None, :]])
    z = inst.destination
    # cost between consecutive steps along each path
    inner = np.zeros(len(paths))
    for k in range(M - 1):
        a, b = pts[paths[:, k]], pts[paths[:, k + 1]]
        inner += np.sum((a - b) ** 2, axis=1)
    inner += np.sum((pts[paths[:, -1]] - z) ** 2, axis=1)
    first = np.sum((inst.nodes[:, None, :] - pts[paths[:, 0]][None, :, :]) ** 2, axis=2)
    costs = first + inner[None, :]
    price = np.zeros(M + 1)
    if beta_prime and inst.constrained:
        u = np.zeros(M) if usage is None else np.asarray(usage, dtype=float)
        price[:M] = beta_prime * theta * np.exp(np.clip(theta * (u - inst.capacities), -clamp, clamp))
    path_price = price[paths].sum(axis=1)
    logw = -beta * costs - path_price[None, :]
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return PathLaw(paths, w / w.sum(axis=1, keepdims=True), costs)


def enumerate_policy(start, steps) -> np.ndarray:
    """Probability of every path under stage matrices, shape (N, P)."""
    start = np.asarray(start, dtype=float)
    steps = np.asarray(steps, dtype=float)
    M = start.shape[1] - 1
    paths = _all_paths(M)
    p = start[:, paths[:, 0]]
    for k in range(M - 1):
        p = p * steps[k][paths[:, k], paths[:, k + 1]][None, :]
    return p


def enumerate_usage(inst: FlpoInstance, start, steps) -> np.ndarray:
    M = inst.facility_count
    paths = _all_paths(M)
    probs = enumerate_policy(start, steps)
    return PathLaw(paths, probs, np.zeros_like(probs)).usage(inst.weights, M)


def enumerate_matrices(inst: FlpoInstance, start, steps) -> dict:
    """Location-system coefficients summed path by path.

    Counts, per facility, the stages it occupies (A), the facility-to-facility
    hops in both directions (B), first-hop node mass times coordinates (Xbar)
    and every hop between it and the destination times the destination (C).
    """
    M = inst.facility_count
    paths = _all_paths(M)
    probs = enumerate_policy(start, steps)
    mass = inst.weights @ probs  # (P,)
    A = np.zeros((M, M))
    B = np.zeros((M, M))
    dest = np.zeros(M)
    for p, g in zip(mass, paths):
        if p == 0:
            continue
        for t in range(M):
            if g[t] < M:
                A[g[t], g[t]] += p
        for k in range(M - 1):
            a, b = g[k], g[k + 1]
            if a < M and b < M:
                B[a, b] += p
                B[b, a] += p
            elif a < M and b == M:
                dest[a] += p
            elif a == M and b < M:
                dest[b] += p
        if g[-1] < M:
            dest[g[-1]] += p
    Xbar = np.zeros((M, inst.dim))
    start = np.asarray(start, dtype=float)
    for i in range(inst.n):
        for m in range(M):
            Xbar[m] += inst.weights[i] * start[i, m] * inst.nodes[i]
    C = dest[:, None] * inst.destination[None, :]
    return {"A": A, "B": B, "Xbar": Xbar, "C": C}


# --- LMDP -----------------------------------------------------------------


def package_itineraries(inst: LmdpInstance, package: int, limit: int = LMDP_LIMIT) -> list[tuple]:
    """Every ride sequence that delivers ``package``.

    An itinerary is a tuple of (vehicle index, route position) departures.
    A package boards at its origin at any listed departure, stays aboard or
    changes to any vehicle leaving the arrival depot no earlier than the
    arrival minute, and ends by alighting at its destination.  Sorted by
    (vehicle index, depot index, position) along the sequence.
    """
    pkg = inst.packages[package]
    depot_idx = {d: i for i, d in enumerate(inst.depots)}
    at = {}
    for k, v in enumerate(inst.vehicles):
        for r, d in enumerate(v.route):
            at.setdefault(d, []).append((k, r))
    found = []

    def extend(seq):
        k, r = seq[-1]
        v = inst.vehicles[k]
        if r + 1 >= len(v.route):
            return
        nxt, arrive = v.route[r + 1], v.times[r + 1]
        if nxt == pkg.destination:
            found.append(tuple(seq))
            if len(found) > limit:
                raise TooLargeError(f"more than {limit} itineraries for {pkg.name}")
        for k2, r2 in at.get(nxt, []):
            if inst.vehicles[k2].times[r2] >= arrive:
                extend(seq + [(k2, r2)])

    for k, r in at.get(pkg.origin, []):
        if inst.vehicles[k].times[r] >= 0:
            extend([(k, r)])

    def key(seq):
        return [(k, depot_idx[inst.vehicles[k].route[r]], r) for k, r in seq]

    return sorted(found, key=key)


def itinerary_arrival(inst: LmdpInstance, itinerary) -> float:
    k, r = itinerary[-1]
    return float(inst.vehicles[k].times[r + 1])


def oracle_lmdp(inst: LmdpInstance, capacity_mode: bool = True) -> OracleReport:
    """Minimum weighted arrival time over all joint itinerary choices.

    With capacities, a choice is admissible when the weighted number of
    packages aboard every departure stays within its vehicle's capacity.
    Packages with no itinerary are left out.  Ties keep the first choice in
    product order of the sorted itinerary lists.
    """
    t0 = time.perf_counter()
    options = [package_itineraries(inst, j) for j in range(len(inst.packages))]
    live = [j for j, o in enumerate(options) if o]
    total = math.prod(len(options[j]) for j in live) if live else 0
    if total > LMDP_LIMIT:
        raise TooLargeError(f"joint itinerary space {total} exceeds the limit {LMDP_LIMIT}")
    caps = inst.capacity if (capacity_mode and inst.constrained) else None
    rho = inst.weights
    best, best_choice = math.inf, None
    for choice in itertools.product(*(options[j] for j in live)):
        value = sum(rho[j] * itinerary_arrival(inst, it) for j, it in zip(live, choice))
        if value >= best - 1e-12:
            continue
        if caps is not None:
            load = {}
            for j, it in zip(live, choice):
                for dep in it:
                    load[dep] = load.get(dep, 0.0) + rho[j]
            if any(m > caps[k] + 1e-12 for (k, _), m in load.items()):
                continue
        best, best_choice = value, choice
    elapsed = time.perf_counter() - t0
    if best_choice is None:
        return OracleReport(math.inf, None, total, elapsed, feasible=False)
    witness = {inst.packages[j].name: it for j, it in zip(live, best_choice)}
    return OracleReport(float(best), witness, total, elapsed)


def describe_itinerary(inst: LmdpInstance, itinerary) -> str:
    k0, r0 = itinerary[0]
    parts = [inst.vehicles[k0].route[r0]]
    for k, r in itinerary:
        v = inst.vehicles[k]
        parts.append(f"({v.name})")
        parts.append(v.route[r + 1])
    return "->".join(parts)
