"""JSON instance and solution files, CSV traces, and seeded instance generation."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from .core import InvalidInstanceError, InvalidParameterError
from .instances import FlpInstance, FlpoInstance, LmdpInstance, Package, Vehicle
from .trace import TRACE_COLUMNS, SolverTrace


class InstanceFileError(InvalidInstanceError):
    """Unreadable, malformed or schema-violating instance file."""


_number = {"type": "number"}
_point = {"type": "array", "items": _number, "minItems": 1}
_points = {"type": "array", "items": _point, "minItems": 1}
_weights = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

FLP_SCHEMA = {
    "type": "object",
    "properties": {
        "problem": {"const": "flp"},
        "nodes": _points,
        "facility_count": {"type": "integer", "minimum": 1},
        "weights": _weights,
        "capacities": {"type": "array", "items": _number, "minItems": 1},
    },
    "required": ["problem", "nodes", "facility_count"],
    "additionalProperties": False,
}

FLPO_SCHEMA = {
    "type": "object",
    "properties": {
        **FLP_SCHEMA["properties"],
        "problem": {"const": "flpo"},
        "destination": _point,
    },
    "required": ["problem", "nodes", "facility_count", "destination"],
    "additionalProperties": False,
}

LMDP_SCHEMA = {
    "type": "object",
    "properties": {
        "problem": {"const": "lmdp"},
        "depots": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "vehicles": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "route": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                    "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
                },
                "required": ["name", "route", "times"],
                "additionalProperties": False,
            },
        },
        "packages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "origin": {"type": "string"},
                    "destination": {"type": "string"},
                },
                "required": ["name", "origin", "destination"],
                "additionalProperties": False,
            },
        },
        "weights": _weights,
        "capacity": {
            "oneOf": [
                _number,
                {"type": "array", "items": _number, "minItems": 1},
                {"type": "object", "additionalProperties": _number},
            ]
        },
    },
    "required": ["problem", "depots", "vehicles", "packages"],
    "additionalProperties": False,
}

SCHEMAS = {"flp": FLP_SCHEMA, "flpo": FLPO_SCHEMA, "lmdp": LMDP_SCHEMA}


def _validate(doc) -> str:
    if not isinstance(doc, dict) or doc.get("problem") not in SCHEMAS:
        raise InstanceFileError('schema violation: top-level "problem" must be one of flp, flpo, lmdp')
    kind = doc["problem"]
    errors = sorted(jsonschema.Draft202012Validator(SCHEMAS[kind]).iter_errors(doc),
                    key=lambda e: list(e.path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise InstanceFileError("schema violation:\n  " + "\n  ".join(lines))
    return kind


def instance_from_dict(doc: dict):
    kind = _validate(doc)
    try:
        if kind == "flp":
            return FlpInstance(np.array(doc["nodes"], dtype=float), doc["facility_count"],
                               doc.get("weights"), doc.get("capacities"))
        if kind == "flpo":
            return FlpoInstance(np.array(doc["nodes"], dtype=float), doc["facility_count"],
                                doc["destination"], doc.get("weights"), doc.get("capacities"))
        return LmdpInstance(
            tuple(doc["depots"]),
            tuple(Vehicle(v["name"], tuple(v["route"]), tuple(v["times"])) for v in doc["vehicles"]),
            tuple(Package(p["name"], p["origin"], p["destination"]) for p in doc["packages"]),
            doc.get("weights"),
            doc.get("capacity"),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, InstanceFileError):
            raise
        raise InstanceFileError(f"schema violation: {exc}") from exc


def load_instance(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceFileError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFileError(f"parse error in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return instance_from_dict(doc)


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _time(t: float):
    return int(t) if float(t).is_integer() else float(t)


def instance_to_dict(inst) -> dict:
    if isinstance(inst, FlpoInstance):
        doc = {"problem": "flpo", "nodes": _floats(inst.nodes), "facility_count": inst.facility_count,
               "destination": _floats(inst.destination), "weights": _floats(inst.weights)}
        if inst.capacities is not None:
            doc["capacities"] = _floats(inst.capacities)
        return doc
    if isinstance(inst, FlpInstance):
        doc = {"problem": "flp", "nodes": _floats(inst.nodes), "facility_count": inst.facility_count,
               "weights": _floats(inst.weights)}
        if inst.capacities is not None:
            doc["capacities"] = _floats(inst.capacities)
        return doc
    if isinstance(inst, LmdpInstance):
        doc = {
            "problem": "lmdp",
            "depots": list(inst.depots),
            "vehicles": [{"name": v.name, "route": list(v.route), "times": [_time(t) for t in v.times]}
                         for v in inst.vehicles],
            "packages": [{"name": p.name, "origin": p.origin, "destination": p.destination}
                         for p in inst.packages],
            "weights": _floats(inst.weights),
        }
        if inst.capacity is not None:
            doc["capacity"] = {v.name: float(w) for v, w in zip(inst.vehicles, inst.capacity)}
        return doc
    raise TypeError(f"not an instance: {type(inst).__name__}")


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def save_instance(path, inst) -> None:
    _write_json(path, instance_to_dict(inst))


def solution_to_dict(solution) -> dict:
    from .flp import FlpSolution
    from .flpo import FlpoSolution
    from .lmdp import DeliveryPlan

    if isinstance(solution, FlpSolution):
        return {
            "problem": "flp",
            "locations": _floats(solution.locations),
            "assignment": [int(a) for a in solution.assignment],
            "cost": float(solution.cost),
            "usage": _floats(solution.usage),
            "feasible": bool(solution.feasible),
            "flags": list(solution.trace.flags),
        }
    if isinstance(solution, FlpoSolution):
        M = solution.locations.shape[0]
        names = [f"f{j + 1}" for j in range(M)] + ["destination"]
        return {
            "problem": "flpo",
            "locations": _floats(solution.locations),
            "paths": [[names[s] for s in path] for path in solution.paths],
            "cost": float(solution.cost),
            "usage": _floats(solution.usage),
            "feasible": bool(solution.feasible),
            "flags": list(solution.trace.flags),
        }
    if isinstance(solution, DeliveryPlan):
        return {
            "problem": "lmdp",
            "itineraries": [
                {
                    "package": it.package,
                    "route": it.route_string(),
                    "total_minutes": _time(it.total) if it.delivered else None,
                    "legs": [{"vehicle": g.vehicle, "board": g.board_depot, "board_time": _time(g.board_time),
                              "alight": g.alight_depot, "alight_time": _time(g.alight_time)} for g in it.legs],
                }
                for it in solution.itineraries
            ],
            "total_cost": float(solution.total_cost),
            "occupancy": {k: float(v) for k, v in solution.occupancy.items()},
            "feasible": bool(solution.feasible),
            "undeliverable": list(solution.undeliverable),
            "flags": list(solution.trace.flags),
        }
    raise TypeError(f"not a solution: {type(solution).__name__}")


def save_solution(path, solution) -> None:
    _write_json(path, solution_to_dict(solution))


def emit_trace(path, trace: SolverTrace) -> None:
    """CSV with header ``TRACE_COLUMNS``; floats in shortest round-trip form."""

    def fmt(v):
        return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            writer.writerow([fmt(v) for v in row.as_tuple()])


def read_trace(path) -> SolverTrace:
    trace = SolverTrace()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise InvalidInstanceError(f"unexpected trace header {reader.fieldnames}")
        for rec in reader:
            kw = {k: float(v) for k, v in rec.items()}
            kw["inner_iterations"] = int(kw["inner_iterations"])
            trace.record(**kw)
    return trace


# --- generation -------------------------------------------------------------


def generate_instance(kind: str, seed: int = 0, **params):
    """Seeded random instance of the given kind.

    flp:  nodes uniform in a ``width`` x ``height`` box (default 400 nodes, 4 x 4, M=4).
    flpo: same, default 317 nodes in 4 x 3, M=5, destination at the box centre.
    lmdp: random routes with increasing integer minutes; each package is
          deliverable by riding one vehicle between two of its stops.
    """
    rng = np.random.default_rng(seed)
    if kind in ("flp", "flpo"):
        defaults = {"flp": (400, 4, 4.0, 4.0), "flpo": (317, 5, 4.0, 3.0)}[kind]
        n = int(params.pop("nodes", defaults[0]))
        m = int(params.pop("facilities", defaults[1]))
        width = float(params.pop("width", defaults[2]))
        height = float(params.pop("height", defaults[3]))
        caps = params.pop("capacities", None)
        dest = params.pop("destination", None)
        if params:
            raise InvalidParameterError(f"unknown parameters {sorted(params)}")
        if n < 1 or m < 1 or width <= 0 or height <= 0:
            raise InvalidParameterError("counts and box sides must be positive")
        nodes = rng.uniform(0.0, 1.0, size=(n, 2)) * [width, height]
        if kind == "flp":
            return FlpInstance(nodes, m, capacities=caps)
        z = [width / 2, height / 2] if dest is None else dest
        return FlpoInstance(nodes, m, z, capacities=caps)
    if kind == "lmdp":
        n_dep = int(params.pop("depots", 4))
        n_veh = int(params.pop("vehicles", 3))
        n_pkg = int(params.pop("packages", 3))
        min_stops = int(params.pop("min_stops", 2))
        max_stops = int(params.pop("max_stops", 4))
        max_gap = int(params.pop("max_gap", 30))
        horizon = int(params.pop("start_window", 30))
        capacity = params.pop("capacity", None)
        if params:
            raise InvalidParameterError(f"unknown parameters {sorted(params)}")
        if n_dep < 2 or n_veh < 1 or n_pkg < 1 or not (2 <= min_stops <= max_stops) or max_gap < 1:
            raise InvalidParameterError("need >= 2 depots, >= 1 vehicle and package, 2 <= min_stops <= max_stops")
        depots = tuple(f"B{i + 1}" for i in range(n_dep))
        vehicles = []
        for k in range(n_veh):
            stops = int(rng.integers(min_stops, max_stops + 1))
            route = [int(rng.integers(n_dep))]
            while len(route) < stops:
                d = int(rng.integers(n_dep - 1))
                route.append(d if d < route[-1] else d + 1)  # no immediate repeat
            t0 = int(rng.integers(0, horizon + 1))
            times = t0 + np.cumsum(np.concatenate([[0], rng.integers(1, max_gap + 1, stops - 1)]))
            vehicles.append(Vehicle(f"V{k + 1}", tuple(depots[d] for d in route),
                                    tuple(int(t) for t in times)))
        packages = []
        for j in range(n_pkg):
            while True:
                v = vehicles[int(rng.integers(n_veh))]
                a, b = sorted(rng.choice(len(v.route), size=2, replace=False))
                if v.route[a] != v.route[b]:
                    break
            packages.append(Package(f"b{j + 1}", v.route[a], v.route[b]))
        return LmdpInstance(depots, tuple(vehicles), tuple(packages), capacity=capacity)
    raise InvalidParameterError(f"unknown instance kind {kind!r}")


def example_lmdp_path() -> Path:
    """Bundled timetable example with four depots, three vehicles and three packages."""
    return Path(__file__).with_name("data") / "lmdp_example.json"
