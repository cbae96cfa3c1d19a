"""Immutable problem descriptions shared by the solvers and the oracles."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import InfeasibleCapacitiesError, InvalidInstanceError


def _normalized_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InvalidInstanceError("weights must be N nonnegative finite numbers with positive sum")
    # Leave already-normalised weights bit-identical so files round-trip.
    return w if abs(w.sum() - 1.0) <= 1e-12 else w / w.sum()


def _check_capacities(capacities, m: int) -> np.ndarray | None:
    if capacities is None:
        return None
    c = np.asarray(capacities, dtype=float)
    if c.shape != (m,):
        raise InvalidInstanceError(f"expected {m} capacities, got shape {c.shape}")
    if np.any(c <= 0) or np.any(c > 1):
        raise InvalidInstanceError("capacities must lie in (0, 1]")
    if c.sum() < 1 - 1e-12:
        raise InfeasibleCapacitiesError(f"infeasible capacities: sum {c.sum():.6g} < 1")
    return c


class _ArrayEq:
    """Field-wise equality for frozen dataclasses holding numpy arrays."""

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FlpInstance(_ArrayEq):
    nodes: np.ndarray
    facility_count: int
    weights: np.ndarray | None = None
    capacities: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0 or not np.all(np.isfinite(x)):
            raise InvalidInstanceError("nodes must be a nonempty N x d array of finite numbers")
        m = int(self.facility_count)
        if m < 1:
            raise InvalidInstanceError("facility_count must be positive")
        if x.shape[0] < m:
            raise InvalidInstanceError(f"need N >= M, got N={x.shape[0]}, M={m}")
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "facility_count", m)
        object.__setattr__(self, "weights", _normalized_weights(self.weights, x.shape[0]))
        object.__setattr__(self, "capacities", _check_capacities(self.capacities, m))

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def constrained(self) -> bool:
        return self.capacities is not None


@dataclass(frozen=True, eq=False)
class FlpoInstance(_ArrayEq):
    nodes: np.ndarray
    facility_count: int
    destination: np.ndarray
    weights: np.ndarray | None = None
    capacities: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0 or not np.all(np.isfinite(x)):
            raise InvalidInstanceError("nodes must be a nonempty N x d array of finite numbers")
        m = int(self.facility_count)
        if m < 1:
            raise InvalidInstanceError("facility_count must be positive")
        z = np.asarray(self.destination, dtype=float).ravel()
        if z.shape != (x.shape[1],) or not np.all(np.isfinite(z)):
            raise InvalidInstanceError("destination must be a finite point of the node dimension")
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "facility_count", m)
        object.__setattr__(self, "destination", z)
        object.__setattr__(self, "weights", _normalized_weights(self.weights, x.shape[0]))
        if self.capacities is not None:
            w = np.asarray(self.capacities, dtype=float)
            if w.shape != (m,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise InvalidInstanceError(f"expected {m} positive finite capacities")
            object.__setattr__(self, "capacities", w)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def constrained(self) -> bool:
        return self.capacities is not None

    @property
    def dest_index(self) -> int:
        return self.facility_count



@dataclass(frozen=True)
class Vehicle:
    name: str
    route: tuple[str, ...]
    times: tuple[float, ...]


@dataclass(frozen=True)
class Package:
    name: str
    origin: str
    destination: str


def _capacity_vector(capacity, vehicles: Sequence[Vehicle]) -> np.ndarray | None:
    if capacity is None:
        return None
    if isinstance(capacity, Mapping):
        names = [v.name for v in vehicles]
        unknown = set(capacity) - set(names)
        if unknown:
            raise InvalidInstanceError(f"capacity for unknown vehicles {sorted(unknown)}")
        missing = [n for n in names if n not in capacity]
        if missing:
            raise InvalidInstanceError(f"no capacity for vehicles {missing}")
        w = np.array([capacity[n] for n in names], dtype=float)
    elif np.ndim(capacity) == 0:
        w = np.full(len(vehicles), float(capacity))
    else:
        w = np.asarray(capacity, dtype=float)
        if w.shape != (len(vehicles),):
            raise InvalidInstanceError(f"expected {len(vehicles)} capacities, got {w.shape}")
    if np.any(w <= 0) or np.any(w > 1):
        raise InvalidInstanceError("vehicle capacities must lie in (0, 1]")
    return w


@dataclass(frozen=True, eq=False)
class LmdpInstance:
    depots: tuple[str, ...]
    vehicles: tuple[Vehicle, ...]
    packages: tuple[Package, ...]
    weights: np.ndarray | None = None
    capacity: np.ndarray | None = None

    def __post_init__(self):
        depots = tuple(self.depots)
        if len(set(depots)) != len(depots) or not depots:
            raise InvalidInstanceError("depot names must be unique and nonempty")
        known = set(depots)
        vehicles = tuple(
            v if isinstance(v, Vehicle) else Vehicle(v["name"], tuple(v["route"]), tuple(v["times"]))
            for v in self.vehicles
        )
        packages = tuple(
            p if isinstance(p, Package) else Package(p["name"], p["origin"], p["destination"])
            for p in self.packages
        )
        if not vehicles or not packages:
            raise InvalidInstanceError("need at least one vehicle and one package")
        for v in vehicles:
            if len(v.route) < 2 or len(v.times) != len(v.route):
                raise InvalidInstanceError(f"vehicle {v.name}: route needs >= 2 stops with one time each")
            if set(v.route) - known:
                raise InvalidInstanceError(f"vehicle {v.name}: unknown depots {sorted(set(v.route) - known)}")
            t = np.asarray(v.times, dtype=float)
            if np.any(t < 0) or np.any(np.diff(t) <= 0):
                raise InvalidInstanceError(f"vehicle {v.name}: times must be nonnegative and strictly increasing")
        for p in packages:
            if p.origin not in known or p.destination not in known:
                raise InvalidInstanceError(f"package {p.name}: unknown depot")
            if p.origin == p.destination:
                raise InvalidInstanceError(f"package {p.name}: origin equals destination")
        R = len(packages)
        if self.weights is None:
            rho = np.full(R, 1.0 / R)
        else:
            rho = np.asarray(self.weights, dtype=float)
            if rho.shape != (R,) or np.any(rho < 0) or rho.sum() <= 0:
                raise InvalidInstanceError("weights must be R nonnegative numbers with positive sum")
            rho = rho if abs(rho.sum() - 1.0) <= 1e-12 else rho / rho.sum()
        object.__setattr__(self, "depots", depots)
        object.__setattr__(self, "vehicles", vehicles)
        object.__setattr__(self, "packages", packages)
        object.__setattr__(self, "weights", rho)
        object.__setattr__(self, "capacity", _capacity_vector(self.capacity, vehicles))

    def __eq__(self, other):
        if not isinstance(other, LmdpInstance):
            return NotImplemented
        same_caps = (self.capacity is None and other.capacity is None) or (
            self.capacity is not None and other.capacity is not None
            and np.array_equal(self.capacity, other.capacity))
        return (self.depots == other.depots and self.vehicles == other.vehicles
                and self.packages == other.packages
                and np.array_equal(self.weights, other.weights) and same_caps)

    __hash__ = None

    @property
    def constrained(self) -> bool:
        return self.capacity is not None

    def with_capacity(self, capacity) -> LmdpInstance:
        return LmdpInstance(self.depots, self.vehicles, self.packages, self.weights, capacity)
