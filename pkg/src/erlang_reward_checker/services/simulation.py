"""Monte Carlo baseline for the reward to absorption, and KS distances.

Runs are simulated in fixed-size blocks, block ``b`` drawing from a Philox
stream keyed by (seed, b), so the sample set does not depend on how many
threads process the blocks.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from erlang_reward_checker.config import settings
from erlang_reward_checker.models import Dtmc, EmpiricalDistribution, ErlangMixture
from erlang_reward_checker.services.dtmc import normalize_transition_rewards
from erlang_reward_checker.services.erlang import mixture_cdf
from erlang_reward_checker.utils.concurrency import parallel_map

logger = logging.getLogger(__name__)

TRUNCATION_WARNING = 1e-3
TIE_DIGITS = 12


@dataclass(frozen=True, eq=False)
class _Tables:
    """CSR transition data with row-offset cumulative keys for sampling."""

    keys: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    rewards: np.ndarray
    absorbing: np.ndarray
    start: int

    @classmethod
    def from_chain(cls, d: Dtmc) -> "_Tables":
        p = d.transition_matrix.tocsr(copy=True)
        p.sort_indices()
        counts = np.diff(p.indptr)
        cumulative = np.cumsum(p.data)
        prior = np.concatenate(([0.0], cumulative))[p.indptr[:-1]]
        within = cumulative - np.repeat(prior, counts)
        last = p.indptr[1:][counts > 0] - 1
        within[last] = 1.0
        return cls(
            keys=np.repeat(np.arange(d.size), counts) + within,
            indptr=p.indptr,
            indices=p.indices,
            rewards=np.where(d.absorbing_mask, 0.0, d.reward_vector),
            absorbing=d.absorbing_mask,
            start=d.index[d.initial],
        )

    def step(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.keys, states + u, side="right")
        pos = np.clip(pos, self.indptr[states], self.indptr[states + 1] - 1)
        return self.indices[pos]


def _simulate_block(
    tables: _Tables, count: int, seed: int, block: int, max_steps: int
) -> tuple[np.ndarray, int]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    state = np.full(count, tables.start)
    total = np.zeros(count)
    active = np.arange(count)[~tables.absorbing[state]]

    steps = 0
    while active.size and steps < max_steps:
        current = state[active]
        total[active] += tables.rewards[current]
        state[active] = tables.step(current, rng.random(active.size))
        active = active[~tables.absorbing[state[active]]]
        steps += 1

    finished = np.ones(count, dtype=bool)
    finished[active] = False
    return total[finished], int(active.size)


def simulate_rewards(
    d: Dtmc,
    runs: int,
    seed: int | None = None,
    max_steps: int | None = None,
    threads: int | None = None,
) -> EmpiricalDistribution:
    """
    Simulate ``runs`` walks from s0 and collect their cumulative rewards.

    Runs still transient after ``max_steps`` steps are dropped and counted in
    ``truncated_runs``.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    seed = settings.default_seed if seed is None else seed
    max_steps = settings.sim_max_steps if max_steps is None else max_steps
    tables = _Tables.from_chain(normalize_transition_rewards(d))

    block_size = settings.sim_block_size
    blocks = [
        (b, min(block_size, runs - b * block_size))
        for b in range(math.ceil(runs / block_size))
    ]
    results = parallel_map(
        lambda item: _simulate_block(tables, item[1], seed, item[0], max_steps),
        blocks,
        threads,
    )

    samples = np.sort(np.concatenate([r[0] for r in results]))
    truncated = sum(r[1] for r in results)
    if truncated > TRUNCATION_WARNING * runs:
        logger.warning(
            "%d of %d runs hit the %d-step cap and were dropped", truncated, runs, max_steps
        )
    logger.info("Simulated %d runs (seed=%d, truncated=%d)", runs, seed, truncated)
    return EmpiricalDistribution(
        samples=samples, run_count=runs, seed=seed, truncated_runs=truncated
    )


def merge_empirical(parts: Sequence[EmpiricalDistribution]) -> EmpiricalDistribution:
    if not parts:
        raise ValueError("nothing to merge")
    return EmpiricalDistribution(
        samples=np.sort(np.concatenate([p.samples for p in parts])),
        run_count=sum(p.run_count for p in parts),
        seed=parts[0].seed,
        truncated_runs=sum(p.truncated_runs for p in parts),
    )


def _require_samples(e: EmpiricalDistribution) -> None:
    if e.size == 0:
        raise ValueError("empirical distribution has no samples")


def empirical_cdf(e: EmpiricalDistribution, x) -> float | np.ndarray:
    """Fraction of samples <= x."""
    _require_samples(e)
    counts = np.searchsorted(e.samples, np.asarray(x, dtype=float), side="right")
    values = counts / e.size
    return float(values) if np.ndim(x) == 0 else values


def empirical_cdf_grid(e: EmpiricalDistribution, points: int) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF on ``points`` evenly spaced abscissae over the sample range."""
    _require_samples(e)
    xs = np.linspace(e.samples[0], e.samples[-1], max(points, 2))
    return xs, empirical_cdf(e, xs)


def ks_statistic(e: EmpiricalDistribution, m: ErlangMixture) -> float:
    """Exact sup |F_emp - F| over the empirical step function."""
    _require_samples(e)
    fitted = mixture_cdf(m, e.samples)
    n = e.size
    i = np.arange(1, n + 1)
    above = np.max(i / n - fitted)
    below = np.max(fitted - (i - 1) / n)
    return float(min(max(above, below, 0.0), 1.0))


def _snap(x: np.ndarray, magnitude: float) -> np.ndarray:
    """Round to TIE_DIGITS significant digits of the pooled magnitude."""
    if magnitude <= 0.0 or not math.isfinite(magnitude):
        return x
    return np.round(x, TIE_DIGITS - math.ceil(math.log10(magnitude)))


def ks_two_sample(e1: EmpiricalDistribution, e2: EmpiricalDistribution) -> float:
    """
    Two-sample KS distance with values equal to TIE_DIGITS significant digits
    treated as ties, so sums that differ only by accumulation order coincide.
    """
    _require_samples(e1)
    _require_samples(e2)
    magnitude = max(float(np.max(np.abs(e1.samples))), float(np.max(np.abs(e2.samples))))
    x1, x2 = _snap(e1.samples, magnitude), _snap(e2.samples, magnitude)
    return float(stats.ks_2samp(x1, x2).statistic)
