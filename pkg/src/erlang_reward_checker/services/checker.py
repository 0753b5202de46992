"""Chance-constraint decisions: moment tail bounds and fitted-CDF fallback.

The bounds are Markov's inequality applied to (X - mu + b)^n, which for n = 2
and b = sigma^2 / a is Cantelli's inequality. They only ever certify.
"""

import logging
import math
import re
from collections.abc import Sequence

from scipy import optimize

from erlang_reward_checker.errors import PropertySyntaxError
from erlang_reward_checker.models import (
    BoundAttempt,
    ChanceConstraint,
    FitConfig,
    MomentVector,
    Tail,
    Verdict,
)
from erlang_reward_checker.services.erlang import mixture_cdf, mixture_sf
from erlang_reward_checker.services.fit import fit_mixture

logger = logging.getLogger(__name__)

NUMBER = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
ONE_SIDED_RE = re.compile(rf"P\[X(<=|>=)({NUMBER})\]>=({NUMBER})")
INTERVAL_RE = re.compile(rf"P\[({NUMBER})<=X<=({NUMBER})\]>=({NUMBER})")
DEGENERATE_TOLERANCE = 1e-12
LATTICE_SLACK = 1e-9


def parse_property(text: str) -> ChanceConstraint:
    """Parse ``P[X <= r] >= a``, ``P[X >= r] >= a`` or ``P[r1 <= X <= r2] >= a``."""
    compact = re.sub(r"\s+", "", text)
    try:
        if match := ONE_SIDED_RE.fullmatch(compact):
            op, threshold, alpha = match.groups()
            direction = "at_most" if op == "<=" else "at_least"
            return ChanceConstraint(float(threshold), float(alpha), direction)
        if match := INTERVAL_RE.fullmatch(compact):
            low, high, alpha = match.groups()
            return ChanceConstraint(float(low), float(alpha), "between", float(high))
    except ValueError as e:
        raise PropertySyntaxError(f"Invalid property '{text}': {e}") from e
    raise PropertySyntaxError(
        f"Invalid property '{text}': expected P[X <= r] >= a, P[X >= r] >= a "
        "or P[r1 <= X <= r2] >= a"
    )


def central_moments(m: MomentVector, order: int) -> list[float]:
    """E[(X - mu)^j] for j = 0..order."""
    base = (1.0, *m.raw)
    mu = m.mean
    return [
        sum(math.comb(j, i) * base[i] * (-mu) ** (j - i) for i in range(j + 1))
        for j in range(order + 1)
    ]


def tail_bound(
    m: MomentVector, a: float, order: int = 2, tail: Tail = "upper"
) -> tuple[float, float]:
    """
    Bound Pr(X - mu >= a) (upper tail) or Pr(mu - X >= a) (lower tail).

    Returns:
        (bound, b): the bound clamped to [0, 1] and the offset attaining it.
    """
    if not a > 0:
        raise ValueError(f"deviation must be positive, got {a!r}")
    if order < 2:
        raise ValueError(f"bound order must be >= 2, got {order}")
    if order > m.k:
        raise ValueError(f"order {order} needs {order} moments, only {m.k} available")
    if order % 2 and tail == "lower":
        raise ValueError("odd orders only bound the upper tail")

    central = central_moments(m, order)
    variance = max(central[2], 0.0)
    if order == 2:
        if variance == 0.0:
            return 0.0, 0.0
        return variance / (variance + a * a), variance / a

    sign = -1.0 if tail == "lower" else 1.0

    def ratio(b: float) -> float:
        shifted = sum(
            math.comb(order, j) * sign**j * central[j] * b ** (order - j)
            for j in range(order + 1)
        )
        return shifted / (a + b) ** order

    # Odd powers need X - mu + b >= 0, which X >= 0 gives for b >= mu.
    low = m.mean if order % 2 else 0.0
    high = low + 100.0 * max(math.sqrt(variance), a, 1e-12)
    result = optimize.minimize_scalar(
        ratio, bounds=(low, high), method="bounded", options={"xatol": 1e-8}
    )
    best_b, best = float(result.x), float(result.fun)
    if ratio(low) < best:
        best_b, best = low, ratio(low)
    return min(max(best, 0.0), 1.0), best_b


def cantelli_bound(m: MomentVector, a: float, order: int = 2) -> float:
    """Upper bound on Pr(X - mu >= a) from the first ``order`` moments."""
    return tail_bound(m, a, order, "upper")[0]


def is_degenerate(m: MomentVector) -> bool:
    variance = m.variance if m.variance is not None else m.raw[1] - m.mean**2
    return variance <= DEGENERATE_TOLERANCE * max(1.0, m.raw[1])


def decide_degenerate(m: MomentVector, c: ChanceConstraint) -> Verdict:
    """X equals its mean almost surely; the probability is 0 or 1."""
    mu = m.mean
    if c.direction == "at_most":
        satisfied = mu <= c.threshold
    elif c.direction == "at_least":
        satisfied = mu >= c.threshold
    else:
        satisfied = c.threshold <= mu <= c.upper  # type: ignore[operator]
    p = 1.0 if satisfied else 0.0
    return Verdict(
        decision="holds" if p >= c.alpha else "fails",
        method="degenerate",
        probability_estimate=(p, p),
        moments_used=m.k,
    )


def _attempt(m: MomentVector, a: float, order: int, tail: Tail) -> BoundAttempt:
    bound, offset = tail_bound(m, a, order, tail)
    return BoundAttempt(order=order, tail=tail, bound=bound, offset=offset, certified=False)


def _even_at_most(order: int) -> int:
    return order if order % 2 == 0 else order - 1


def decide_by_bound(
    m: MomentVector, c: ChanceConstraint, orders: Sequence[int]
) -> tuple[Verdict | None, tuple[BoundAttempt, ...]]:
    """
    Try the bound orders in ascending order; the first certificate wins.

    Returns:
        (verdict, attempts): verdict is None when no order certifies.
    """
    mu = m.mean
    attempts: list[BoundAttempt] = []
    for order in sorted(set(orders)):
        if order > m.k:
            continue
        if c.direction == "at_most":
            if c.threshold <= mu:
                break
            parts = [_attempt(m, c.threshold - mu, order, "upper")]
        elif c.direction == "at_least":
            if c.threshold >= mu:
                break
            if order % 2:
                continue
            parts = [_attempt(m, mu - c.threshold, order, "lower")]
        else:
            if not c.threshold < mu < c.upper:  # type: ignore[operator]
                break
            parts = [
                _attempt(m, mu - c.threshold, _even_at_most(order), "lower"),
                _attempt(m, c.upper - mu, order, "upper"),  # type: ignore[operator]
            ]

        lower = 1.0 - sum(part.bound for part in parts)
        certified = lower >= c.alpha
        attempts.extend(
            BoundAttempt(p.order, p.tail, p.bound, p.offset, certified) for p in parts
        )
        logger.debug("order %d bound gives Pr >= %.6g", order, lower)
        if certified:
            verdict = Verdict(
                decision="holds",
                method=f"cantelli({order})",
                probability_estimate=(max(lower, 0.0), 1.0),
                moments_used=m.k,
                bound_attempts=tuple(attempts),
            )
            return verdict, tuple(attempts)
    return None, tuple(attempts)


def undetermined(m: MomentVector, attempts: tuple[BoundAttempt, ...]) -> Verdict:
    """Verdict when only bounds were allowed and none certified."""
    lower = 0.0
    for order in {a.order for a in attempts}:
        same = [a for a in attempts if a.order == order]
        lower = max(lower, 1.0 - sum(a.bound for a in same))
    return Verdict(
        decision="undetermined_by_bound",
        method="cantelli",
        probability_estimate=(lower, 1.0),
        moments_used=m.k,
        bound_attempts=attempts,
        undetermined_by_bound=True,
    )


def _below(x: float, lattice: float | None) -> float:
    """Where to read Pr(X <= x): midway to the next lattice value above."""
    if not lattice:
        return x
    return lattice * math.floor(x / lattice + LATTICE_SLACK) + 0.5 * lattice


def _above(x: float, lattice: float | None) -> float:
    """Where to read Pr(X >= x): midway to the lattice value below."""
    if not lattice:
        return x
    return lattice * math.ceil(x / lattice - LATTICE_SLACK) - 0.5 * lattice


def decide_by_fit(
    m: MomentVector,
    c: ChanceConstraint,
    cfg: FitConfig,
    margin: float,
    attempts: tuple[BoundAttempt, ...] = (),
    threads: int | None = None,
    lattice: float | None = None,
) -> Verdict:
    """
    Fit a mixture and read the requirement off its CDF.

    When every reward is a multiple of ``lattice`` the reward to absorption
    lives on that lattice, and the continuous CDF is read halfway between
    lattice values instead of at the threshold itself.
    """
    fit = fit_mixture(m, cfg, threads=threads)
    mixture = fit.mixture
    if c.direction == "at_most":
        p = mixture_cdf(mixture, _below(c.threshold, lattice))
    elif c.direction == "at_least":
        p = mixture_sf(mixture, _above(c.threshold, lattice))
    else:
        upper = _below(c.upper, lattice)  # type: ignore[arg-type]
        p = mixture_cdf(mixture, upper) - mixture_cdf(mixture, _above(c.threshold, lattice))
    p = min(max(float(p), 0.0), 1.0)
    return Verdict(
        decision="holds" if p >= c.alpha else "fails",
        method="fitted_cdf",
        probability_estimate=(p, p),
        moments_used=m.k,
        fit=fit,
        bound_attempts=attempts,
        undetermined_by_bound=bool(attempts),
        marginal=abs(p - c.alpha) < margin,
    )
