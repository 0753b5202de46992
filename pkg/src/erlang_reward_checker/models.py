from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
from scipy import sparse

from erlang_reward_checker.errors import MixtureError

Direction = Literal["at_most", "at_least", "between"]
Decision = Literal["holds", "fails", "undetermined_by_bound"]
Tail = Literal["upper", "lower"]


@dataclass(frozen=True, eq=False)
class Dtmc:
    """A finite DTMC with state rewards, labels and an absorbing set.

    States are indexed in declaration order; every matrix and vector derived
    from the chain uses that order. Instances are never mutated after
    construction; transforms return new chains.
    """

    states: tuple[str, ...]
    initial: str
    transitions: Mapping[tuple[str, str], float]
    state_rewards: Mapping[str, float]
    labels: Mapping[str, frozenset[str]] = field(default_factory=dict)
    absorbing: frozenset[str] = frozenset()
    transition_rewards: Mapping[tuple[str, str], float] = field(default_factory=dict)

    @cached_property
    def index(self) -> dict[str, int]:
        return {state: i for i, state in enumerate(self.states)}

    @property
    def size(self) -> int:
        return len(self.states)

    @cached_property
    def transition_matrix(self) -> sparse.csr_matrix:
        n = self.size
        if not self.transitions:
            return sparse.csr_matrix((n, n))
        rows, cols, probs = [], [], []
        for (source, target), p in self.transitions.items():
            rows.append(self.index[source])
            cols.append(self.index[target])
            probs.append(p)
        return sparse.csr_matrix((probs, (rows, cols)), shape=(n, n))

    @cached_property
    def reward_vector(self) -> np.ndarray:
        return np.array(
            [self.state_rewards.get(state, 0.0) for state in self.states], dtype=float
        )

    @cached_property
    def absorbing_mask(self) -> np.ndarray:
        return np.array([state in self.absorbing for state in self.states])

    def successors(self) -> dict[str, list[tuple[str, float]]]:
        out: dict[str, list[tuple[str, float]]] = {state: [] for state in self.states}
        for (source, target), p in self.transitions.items():
            out[source].append((target, p))
        return out


@dataclass(frozen=True)
class ValidationIssue:
    """One violated DTMC invariant."""

    kind: str
    state: str | None
    message: str


@dataclass(frozen=True)
class MomentVector:
    """Raw moments of the cumulative reward to absorption from s0.

    ``standardized`` holds the orders 3..K rescaled by the configured rule.
    """

    raw: tuple[float, ...]
    variance: float | None = None
    sigma: float | None = None
    standardized: tuple[float, ...] = ()
    scaling: str = "per-order"

    @property
    def k(self) -> int:
        return len(self.raw)

    @property
    def mean(self) -> float:
        return self.raw[0]


@dataclass(frozen=True, eq=False)
class MomentSystem:
    transient_states: tuple[str, ...]
    transient_index: dict[str, int]
    p_cc: sparse.csr_matrix
    reward_vec: np.ndarray


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Moments at s0 plus the per-state table u_k(x) over transient states."""

    vector: MomentVector
    transient_states: tuple[str, ...]
    per_state: np.ndarray
    solver: str

    def at(self, state: str, k: int) -> float:
        if state not in self.transient_states:
            return 0.0
        return float(self.per_state[k - 1, self.transient_states.index(state)])


@dataclass(frozen=True, eq=False)
class ErlangMixture:
    """Erlang mixture with a common rate, shifted by ``location``."""

    weights: tuple[float, ...]
    shapes: tuple[int, ...]
    rate: float
    location: float = 0.0

    def __post_init__(self) -> None:
        if not self.weights or len(self.weights) != len(self.shapes):
            raise MixtureError("weights and shapes must be non-empty and aligned")
        if any(w < 0 or not np.isfinite(w) for w in self.weights):
            raise MixtureError(f"weights must be nonnegative: {self.weights}")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise MixtureError(f"weights must sum to 1, got {sum(self.weights)!r}")
        if any(int(a) != a or a < 1 for a in self.shapes):
            raise MixtureError(f"shapes must be positive integers: {self.shapes}")
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise MixtureError(f"rate must be positive, got {self.rate!r}")
        if not (self.location >= 0 and np.isfinite(self.location)):
            raise MixtureError(f"location must be nonnegative, got {self.location!r}")

    @property
    def n(self) -> int:
        return len(self.weights)

    @cached_property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @cached_property
    def shape_array(self) -> np.ndarray:
        return np.asarray(self.shapes, dtype=float)

    def to_record(self) -> dict:
        return {
            "weights": list(self.weights),
            "shapes": list(self.shapes),
            "rate": self.rate,
            "location": self.location,
        }


@dataclass(frozen=True, eq=False)
class GridErlangMixture:
    """Erlang mixture on the shape grid 1..j_max with scale ``beta``."""

    mixture: ErlangMixture
    beta: float
    truncated_mass: float


@dataclass(frozen=True)
class FitConfig:
    k: int = 3
    n: int = 3
    shape_rule: str = "exponential:3"
    gamma: float = 1.0
    epsilon: float = 1e-8
    rate_bounds: tuple[float, float] = (0.01, 50.0)
    max_outer_iterations: int = 500
    standardize_residuals: bool = True
    moment_tolerance: float = 1e-5
    scaling: Literal["per-order", "paper-literal"] = "per-order"
    location_rule: Literal["mean-minus-sigma", "zero"] = "mean-minus-sigma"
    restarts: int = 5
    seed: int = 0

    @classmethod
    def from_settings(cls, **overrides) -> "FitConfig":
        from erlang_reward_checker.config import settings

        scaling = settings.moment_scaling
        values = {
            "restarts": settings.fit_restarts,
            "seed": settings.default_seed,
            "moment_tolerance": settings.fit_moment_tolerance,
            "standardize_residuals": scaling != "raw",
            "scaling": "paper-literal" if scaling == "paper-literal" else "per-order",
        }
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True, eq=False)
class FitResult:
    mixture: ErlangMixture
    loss: float
    moment_residuals: tuple[float, ...]
    standardized_residuals: tuple[float, ...]
    entropy: float
    iterations: int
    converged: bool
    wall_time: float
    target_moments: tuple[float, ...]
    restarts: int = 1
    best_restart: int = 0
    shape_rule: str = "exponential:3"
    rate_at_bound: bool = False
    entropy_upper_limit: float = float("nan")
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ChanceConstraint:
    """Requirement Pr(X <= r*) >= alpha, Pr(X >= r*) >= alpha or an interval."""

    threshold: float
    alpha: float
    direction: Direction = "at_most"
    upper: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.threshold < 0:
            raise ValueError(f"threshold must be nonnegative, got {self.threshold!r}")
        if self.direction == "between":
            if self.upper is None or self.upper < self.threshold:
                raise ValueError("interval bounds must be ordered: r_lo <= r_hi")
        elif self.upper is not None:
            raise ValueError("upper bound only applies to interval constraints")

    @property
    def interval(self) -> tuple[float, float] | None:
        if self.direction != "between":
            return None
        return self.threshold, self.upper  # type: ignore[return-value]

    def describe(self) -> str:
        if self.direction == "between":
            return f"P[{self.threshold:g} <= X <= {self.upper:g}] >= {self.alpha:g}"
        op = "<=" if self.direction == "at_most" else ">="
        return f"P[X {op} {self.threshold:g}] >= {self.alpha:g}"


@dataclass(frozen=True)
class BoundAttempt:
    order: int
    tail: Tail
    bound: float
    offset: float
    certified: bool


@dataclass(frozen=True, eq=False)
class Verdict:
    decision: Decision
    method: str
    probability_estimate: tuple[float, float]
    moments_used: int
    fit: FitResult | None = None
    bound_attempts: tuple[BoundAttempt, ...] = ()
    undetermined_by_bound: bool = False
    marginal: bool = False


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Sorted Monte Carlo samples of the cumulative reward."""

    samples: np.ndarray
    run_count: int
    seed: int
    truncated_runs: int = 0

    @property
    def size(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class GridRow:
    k: int
    n: int
    shape_rule: str
    loss: float
    iterations: int
    converged: bool
    t_opt: float
    t_total: float
    max_standardized_residual: float
    ks: float | None = None
