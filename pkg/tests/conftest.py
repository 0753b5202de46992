"""Shared fixtures: bundled models and random absorbing chains."""

import numpy as np
import pytest

from erlang_reward_checker.models import Dtmc
from erlang_reward_checker.repositories.model_files import load_bundled_model
from erlang_reward_checker.services.model_parser import parse_model


def make_random_dtmc(seed: int, n_transient: int) -> Dtmc:
    """Transient states s0.. with 1-3 random successors and a guaranteed exit."""
    rng = np.random.default_rng(seed)
    states = tuple(f"s{i}" for i in range(n_transient)) + ("done",)
    transitions: dict[tuple[str, str], float] = {}
    for i in range(n_transient):
        exit_p = rng.uniform(0.1, 0.5)
        targets = rng.choice(n_transient, size=rng.integers(1, 4), replace=False)
        shares = rng.dirichlet(np.ones(targets.size)) * (1.0 - exit_p)
        for target, share in zip(targets, shares):
            transitions[(f"s{i}", f"s{target}")] = float(share)
        transitions[(f"s{i}", "done")] = float(exit_p)
    transitions[("done", "done")] = 1.0
    rewards = {f"s{i}": float(np.round(rng.uniform(0.0, 3.0), 2)) for i in range(n_transient)}
    rewards["done"] = 0.0
    return Dtmc(
        states=states,
        initial="s0",
        transitions=transitions,
        state_rewards=rewards,
        labels={"done": frozenset({"goal"})},
        absorbing=frozenset({"done"}),
    )


@pytest.fixture
def bundled():
    return load_bundled_model


@pytest.fixture
def geometric() -> Dtmc:
    return load_bundled_model("geometric")


@pytest.fixture
def deterministic() -> Dtmc:
    return load_bundled_model("deterministic")


@pytest.fixture
def random_chains() -> list[Dtmc]:
    return [make_random_dtmc(seed, 5 + seed % 16) for seed in range(20)]


@pytest.fixture
def chain():
    def _parse(text: str, **kwargs) -> Dtmc:
        return parse_model(text, **kwargs)

    return _parse
