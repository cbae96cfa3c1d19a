"""Capacity-constrained deterministic annealing for facility location, path-based
facility location and timetable delivery scheduling."""

from .core import (
    AnnealError,
    AnnealSchedule,
    EmptySupportError,
    FixedPointConfig,
    InfeasibleCapacitiesError,
    InvalidInstanceError,
    InvalidParameterError,
    NoConvergenceError,
    PenaltyConfig,
    TooLargeError,
)
from .fileio import (
    emit_trace,
    example_lmdp_path,
    generate_instance,
    load_instance,
    save_instance,
    save_solution,
)
from .flp import FlpSolution, anneal_flp
from .flpo import FlpoSolution, anneal_flpo
from .instances import FlpInstance, FlpoInstance, LmdpInstance, Package, Vehicle
from .lmdp import DeliveryPlan, anneal_lmdp, solve_unconstrained
from .trace import TRACE_COLUMNS, SolverTrace

__all__ = [
    "TRACE_COLUMNS",
    "AnnealError",
    "AnnealSchedule",
    "DeliveryPlan",
    "EmptySupportError",
    "FixedPointConfig",
    "FlpInstance",
    "FlpSolution",
    "FlpoInstance",
    "FlpoSolution",
    "InfeasibleCapacitiesError",
    "InvalidInstanceError",
    "InvalidParameterError",
    "LmdpInstance",
    "NoConvergenceError",
    "Package",
    "PenaltyConfig",
    "SolverTrace",
    "TooLargeError",
    "Vehicle",
    "anneal_flp",
    "anneal_flpo",
    "anneal_lmdp",
    "emit_trace",
    "example_lmdp_path",
    "generate_instance",
    "load_instance",
    "save_instance",
    "save_solution",
    "solve_unconstrained",
]
