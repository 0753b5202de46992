"""Validation and reward-preserving transforms of DTMCs."""

import logging
import math
from collections import deque
from collections.abc import Callable
from dataclasses import replace
from fractions import Fraction
from functools import reduce
from typing import Literal

import numpy as np

from erlang_reward_checker.errors import ModelError
from erlang_reward_checker.models import Dtmc, ValidationIssue
from erlang_reward_checker.services.moments import reward_moments

logger = logging.getLogger(__name__)

ROW_TOLERANCE = 1e-9
LATTICE_DENOMINATOR = 10**6

Predicate = Callable[[frozenset[str]], bool]


def _fresh_name(base: str, taken: set[str]) -> str:
    name = base
    suffix = 1
    while name in taken:
        name = f"{base}#{suffix}"
        suffix += 1
    taken.add(name)
    return name


def _can_reach_absorption(d: Dtmc) -> set[str]:
    """States from which some absorbing state is graph-reachable."""
    predecessors: dict[str, list[str]] = {state: [] for state in d.states}
    for (source, target), p in d.transitions.items():
        if p > 0 and target in predecessors:
            predecessors[target].append(source)

    reached = set(d.absorbing)
    queue = deque(d.absorbing)
    while queue:
        state = queue.popleft()
        for pred in predecessors.get(state, []):
            if pred not in reached:
                reached.add(pred)
                queue.append(pred)
    return reached


def validate(d: Dtmc) -> list[ValidationIssue]:
    """Return every violated invariant; an empty list means the chain is valid."""
    issues: list[ValidationIssue] = []
    known = set(d.states)

    if d.initial not in known:
        issues.append(
            ValidationIssue("unknown-state", d.initial, f"unknown initial state '{d.initial}'")
        )

    for state in d.states:
        reward = d.state_rewards.get(state, 0.0)
        if not math.isfinite(reward):
            issues.append(
                ValidationIssue("non-finite-reward", state, f"non-finite reward at '{state}'")
            )
        elif reward < 0:
            issues.append(
                ValidationIssue("negative-reward", state, f"negative reward {reward:g} at '{state}'")
            )

    row_sums = {state: 0.0 for state in d.states}
    dangling = False
    for (source, target), p in d.transitions.items():
        for end in (source, target):
            if end not in known:
                dangling = True
                issues.append(
                    ValidationIssue("unknown-state", end, f"transition references unknown state '{end}'")
                )
        if not (0.0 <= p <= 1.0) or not math.isfinite(p):
            issues.append(
                ValidationIssue(
                    "invalid-probability", source, f"probability {p:g} on {source} -> {target}"
                )
            )
        if source in row_sums:
            row_sums[source] += p

    for (source, target), reward in d.transition_rewards.items():
        if reward < 0 or not math.isfinite(reward):
            issues.append(
                ValidationIssue(
                    "negative-reward",
                    source,
                    f"negative transition reward {reward:g} on {source} -> {target}",
                )
            )

    for state, total in row_sums.items():
        if abs(total - 1.0) > ROW_TOLERANCE:
            issues.append(
                ValidationIssue(
                    "row-not-stochastic", state, f"row not stochastic: '{state}' sums to {total:.12g}"
                )
            )

    outgoing: dict[str, list[tuple[str, float]]] = {}
    for (source, target), p in d.transitions.items():
        outgoing.setdefault(source, []).append((target, p))
    for state in sorted(d.absorbing):
        if outgoing.get(state, []) != [(state, 1.0)]:
            issues.append(
                ValidationIssue(
                    "absorbing-not-self-loop",
                    state,
                    f"absorbing state '{state}' must have exactly one self-loop with probability 1",
                )
            )

    if not dangling:
        reaching = _can_reach_absorption(d)
        for state in d.states:
            if state not in reaching:
                issues.append(
                    ValidationIssue(
                        "non-absorbing-recurrent-class",
                        state,
                        f"non-absorbing recurrent class: '{state}' cannot reach an absorbing state",
                    )
                )
    return issues


def normalize_transition_rewards(d: Dtmc) -> Dtmc:
    """Replace every rewarded transition (s, p/r, s') by (s, p, q), (q, 1, s').

    The fresh state q carries state reward r, so cumulative rewards to
    absorption keep their law.
    """
    if not d.transition_rewards:
        return d

    taken = set(d.states)
    states = list(d.states)
    rewards = dict(d.state_rewards)
    labels = dict(d.labels)
    transitions: dict[tuple[str, str], float] = {}

    for (source, target), p in d.transitions.items():
        reward = d.transition_rewards.get((source, target), 0.0)
        if reward == 0.0 or source in d.absorbing:
            transitions[(source, target)] = p
            continue
        fresh = _fresh_name(f"{source}->{target}", taken)
        states.append(fresh)
        rewards[fresh] = reward
        labels[fresh] = frozenset()
        transitions[(source, fresh)] = p
        transitions[(fresh, target)] = 1.0

    logger.info(
        "Eliminated %d transition rewards", len(states) - len(d.states)
    )
    return Dtmc(
        states=tuple(states),
        initial=d.initial,
        transitions=transitions,
        state_rewards=rewards,
        labels=labels,
        absorbing=d.absorbing,
    )


def _as_predicate(phi: str | Predicate) -> Predicate:
    if isinstance(phi, str):
        return lambda labels: phi in labels
    return phi


def reach_to_absorption(
    d: Dtmc,
    phi: str | Predicate,
    mode: Literal["probability", "reward"] = "probability",
) -> Dtmc:
    """
    Make every phi-state absorbing so the query becomes reward to absorption.

    In probability mode the only reward is 1 for entering phi, so the
    cumulative reward is the reachability indicator. In reward mode the
    rewards are kept.
    """
    predicate = _as_predicate(phi)
    targets = {s for s in d.states if predicate(d.labels.get(s, frozenset()))}
    if not targets:
        raise ModelError("no state satisfies the target predicate")

    if mode == "reward" and targets <= d.absorbing:
        return d

    transitions: dict[tuple[str, str], float] = {}
    for (source, target), p in d.transitions.items():
        if source not in targets:
            transitions[(source, target)] = p
    for state in targets:
        transitions[(state, state)] = 1.0
    absorbing = frozenset(d.absorbing | targets)

    if mode == "reward":
        kept = {
            key: reward
            for key, reward in d.transition_rewards.items()
            if key in transitions and key[0] not in absorbing
        }
        return Dtmc(
            states=d.states,
            initial=d.initial,
            transitions=transitions,
            state_rewards=dict(d.state_rewards),
            labels=dict(d.labels),
            absorbing=absorbing,
            transition_rewards=kept,
        )

    entering = {
        (source, target): 1.0
        for (source, target) in transitions
        if source not in absorbing and target in targets
    }
    states = list(d.states)
    initial = d.initial
    if d.initial in targets:
        initial = _fresh_name("init", set(states))
        states.append(initial)
        transitions[(initial, d.initial)] = 1.0

    reduced = Dtmc(
        states=tuple(states),
        initial=initial,
        transitions=transitions,
        state_rewards={s: (1.0 if s == initial and d.initial in targets else 0.0) for s in states},
        labels=dict(d.labels),
        absorbing=absorbing,
        transition_rewards=entering,
    )
    return normalize_transition_rewards(reduced)


def discretize_rewards(d: Dtmc, delta: float) -> Dtmc:
    """
    Expand every rewarded transient state into a chain of k = ceil(r/delta)
    states with reward delta each.

    Zero-reward states keep k = 1 and reward 0. The cumulative reward of the
    result dominates the original and exceeds it by less than delta per step.
    """
    if not delta > 0:
        raise ModelError(f"delta must be positive, got {delta!r}")
    d = normalize_transition_rewards(d)

    successors = d.successors()
    taken = set(d.states)
    states: list[str] = []
    rewards: dict[str, float] = {}
    labels: dict[str, frozenset[str]] = {}
    transitions: dict[tuple[str, str], float] = {}

    for state in d.states:
        reward = d.state_rewards.get(state, 0.0)
        states.append(state)
        labels[state] = d.labels.get(state, frozenset())
        if state in d.absorbing or reward == 0.0:
            rewards[state] = reward
            for target, p in successors[state]:
                transitions[(state, target)] = p
            continue

        k = max(1, math.ceil(reward / delta - 1e-9))
        chain = [state]
        for j in range(1, k):
            intermediate = _fresh_name(f"{state}~{j}", taken)
            chain.append(intermediate)
            states.append(intermediate)
            labels[intermediate] = frozenset()
        for link in chain:
            rewards[link] = delta
        for here, there in zip(chain, chain[1:]):
            transitions[(here, there)] = 1.0
        for target, p in successors[state]:
            transitions[(chain[-1], target)] = p

    logger.info(
        "Discretized rewards with delta=%g: %d -> %d states", delta, d.size, len(states)
    )
    return Dtmc(
        states=tuple(states),
        initial=d.initial,
        transitions=transitions,
        state_rewards=rewards,
        labels=labels,
        absorbing=d.absorbing,
    )


def expected_steps_to_absorption(d: Dtmc) -> tuple[dict[str, float], float]:
    """Solve (I - P_CC) t = 1; returns E[T] per transient state and at s0."""
    unit = replace(
        d,
        state_rewards={s: (0.0 if s in d.absorbing else 1.0) for s in d.states},
        transition_rewards={},
    )
    table = reward_moments(unit, 1)
    per_state = {
        state: float(value)
        for state, value in zip(table.transient_states, np.atleast_1d(table.per_state[0]))
    }
    return per_state, table.vector.raw[0]


def _fraction_gcd(p: Fraction, q: Fraction) -> Fraction:
    return Fraction(
        math.gcd(p.numerator * q.denominator, q.numerator * p.denominator),
        p.denominator * q.denominator,
    )


def reward_lattice(d: Dtmc) -> float | None:
    """Largest h with every state and transition reward an integer multiple of h."""
    steps = []
    for r in (*d.state_rewards.values(), *d.transition_rewards.values()):
        if r == 0.0:
            continue
        q = Fraction(abs(r)).limit_denominator(LATTICE_DENOMINATOR)
        if abs(float(q) - abs(r)) > 1e-14 * max(1.0, abs(r)):
            return None
        steps.append(q)
    if not steps:
        return None
    return float(reduce(_fraction_gcd, steps))
