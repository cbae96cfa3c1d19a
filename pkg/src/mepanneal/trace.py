"""Per-(beta, beta') records of an annealing run."""

from __future__ import annotations

from dataclasses import dataclass, field

TRACE_COLUMNS = (
    "beta",
    "beta_prime",
    "free_energy",
    "distortion",
    "penalty",
    "max_slack",
    "distinct_or_max_occupancy",
    "inner_iterations",
)


@dataclass(frozen=True)
class TraceRow:
    beta: float
    beta_prime: float
    free_energy: float
    distortion: float
    penalty: float
    max_slack: float
    # Distinct facility count for FLP/FLPO, largest occupancy for LMDP.
    distinct_or_max_occupancy: float
    inner_iterations: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in TRACE_COLUMNS)


@dataclass
class SolverTrace:
    rows: list[TraceRow] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def record(self, **kw) -> None:
        self.rows.append(TraceRow(**kw))

    def flag(self, message: str) -> None:
        if message not in self.flags:
            self.flags.append(message)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def is_monotone(self) -> bool:
        """beta nondecreasing; beta' nondecreasing inside each beta block."""
        for prev, cur in zip(self.rows, self.rows[1:]):
            if cur.beta < prev.beta:
                return False
            if cur.beta == prev.beta and cur.beta_prime < prev.beta_prime:
                return False
        return True

    def __len__(self) -> int:
        return len(self.rows)
