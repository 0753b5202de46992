"""Erlang and common-rate Erlang-mixture distributions.

Densities are assembled in log space with log-gamma normalizers, CDFs use the
regularized incomplete gamma function, so shapes in the tens of thousands
stay finite.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from erlang_reward_checker.errors import MixtureError, QuadratureError
from erlang_reward_checker.models import ErlangMixture, GridErlangMixture

logger = logging.getLogger(__name__)

ENTROPY_TAIL = 1e-10
ENTROPY_ATOL = 1e-8
LOG_FLOOR = -700.0


def _check_shape_rate(a, lam) -> None:
    if isinstance(a, bool) or not float(a).is_integer() or a < 1:
        raise MixtureError(f"shape must be a positive integer, got {a!r}")
    if not (lam > 0 and math.isfinite(lam)):
        raise MixtureError(f"rate must be positive, got {lam!r}")


def _result(values: np.ndarray, x) -> float | np.ndarray:
    return float(values) if np.ndim(x) == 0 else values


def _component_logpdf(y: np.ndarray, shapes: np.ndarray, lam: float) -> np.ndarray:
    """Log densities, shape (len(y), len(shapes))."""
    y = np.asarray(y, dtype=float)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_y = np.log(np.where(y > 0, y, 1.0))
        inner = shapes * math.log(lam) + (shapes - 1) * log_y - lam * y - special.gammaln(shapes)
    at_origin = np.where(shapes == 1, math.log(lam), -np.inf)
    return np.where(y > 0, inner, np.where(y == 0, at_origin, -np.inf))


def erlang_pdf(x, a: int, lam: float) -> float | np.ndarray:
    _check_shape_rate(a, lam)
    values = np.exp(_component_logpdf(x, np.array([float(a)]), lam)[..., 0])
    return _result(values, x)


def erlang_cdf(x, a: int, lam: float) -> float | np.ndarray:
    _check_shape_rate(a, lam)
    y = np.clip(np.asarray(x, dtype=float), 0.0, None)
    return _result(special.gammainc(float(a), lam * y), x)


def erlang_sf(x, a: int, lam: float) -> float | np.ndarray:
    _check_shape_rate(a, lam)
    y = np.clip(np.asarray(x, dtype=float), 0.0, None)
    return _result(special.gammaincc(float(a), lam * y), x)


def mixture_logpdf(m: ErlangMixture, x) -> float | np.ndarray:
    y = np.asarray(x, dtype=float) - m.location
    logs = _component_logpdf(y, m.shape_array, m.rate)
    with np.errstate(divide="ignore"):
        log_w = np.log(m.weight_array)
    return _result(special.logsumexp(logs + log_w, axis=-1), x)


def mixture_pdf(m: ErlangMixture, x) -> float | np.ndarray:
    y = np.asarray(x, dtype=float) - m.location
    comps = np.exp(_component_logpdf(y, m.shape_array, m.rate))
    return _result(comps @ m.weight_array, x)


def mixture_cdf(m: ErlangMixture, x) -> float | np.ndarray:
    """sum_i w_i F(x - location; a_i, rate); zero at and below the location."""
    y = np.clip(np.asarray(x, dtype=float) - m.location, 0.0, None)[..., None]
    comps = special.gammainc(m.shape_array, m.rate * y)
    return _result(np.clip(comps @ m.weight_array, 0.0, 1.0), x)


def mixture_sf(m: ErlangMixture, x) -> float | np.ndarray:
    y = np.clip(np.asarray(x, dtype=float) - m.location, 0.0, None)[..., None]
    comps = special.gammaincc(m.shape_array, m.rate * y)
    return _result(np.clip(comps @ m.weight_array, 0.0, 1.0), x)


def mixture_moments(m: ErlangMixture, k: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """
    Closed-form raw moments of the mixture.

    Returns:
        (unshifted, shifted): moments of Y and of location + Y, orders 1..k.
    """
    if k < 1:
        raise MixtureError(f"number of moments must be >= 1, got {k}")
    orders = np.arange(1, k + 1)
    a = m.shape_array[:, None]
    log_terms = special.gammaln(a + orders) - special.gammaln(a) - orders * math.log(m.rate)
    unshifted = m.weight_array @ np.exp(log_terms)

    base = np.concatenate(([1.0], unshifted))
    shifted = [
        sum(math.comb(order, j) * m.location ** (order - j) * base[j] for j in range(order + 1))
        for order in range(1, k + 1)
    ]
    return tuple(float(v) for v in unshifted), tuple(float(v) for v in shifted)


def mixture_quantile(m: ErlangMixture, p: float) -> float:
    """x with F(x) = p, by bisection; the upper half is inverted on the survival side."""
    if not 0.0 < p < 1.0:
        raise MixtureError(f"probability must lie in (0, 1), got {p!r}")

    unshifted = ErlangMixture(m.weights, m.shapes, m.rate, 0.0)
    mean = unshifted.weight_array @ unshifted.shape_array / m.rate
    hi = max(mean, 1.0 / m.rate)
    while mixture_sf(unshifted, hi) > 1.0 - p and hi < 1e300:
        hi *= 2.0

    if p > 0.5:
        def gap(y: float) -> float:
            return (1.0 - p) - mixture_sf(unshifted, y)
    else:
        def gap(y: float) -> float:
            return mixture_cdf(unshifted, y) - p

    if gap(0.0) >= 0.0:
        return m.location
    root = optimize.bisect(gap, 0.0, hi, xtol=1e-13, maxiter=500)
    return m.location + float(root)


@dataclass(frozen=True)
class EntropyEstimate:
    """Differential entropy and its gradient w.r.t. (weights, log rate)."""

    value: float
    grad_weights: np.ndarray
    grad_log_rate: float
    upper_limit: float
    error: float


def _breakpoints(m: ErlangMixture, upper: float) -> np.ndarray:
    points = [0.0, upper]
    for w, a in zip(m.weights, m.shapes):
        if w <= 0.0:
            continue
        mode = (a - 1) / m.rate
        spread = 6.0 * math.sqrt(a) / m.rate
        points.extend(p for p in (mode - spread, mode, mode + spread) if 0.0 < p < upper)
    return np.unique(points)


def entropy_with_gradient(m: ErlangMixture, atol: float = ENTROPY_ATOL) -> EntropyEstimate:
    """
    Entropy of the unshifted mixture over [0, q], q its (1 - 1e-10) quantile.

    All integrals (entropy and gradient terms) come from one vector-valued
    adaptive quadrature per segment between component modes.
    """
    unshifted = ErlangMixture(m.weights, m.shapes, m.rate, 0.0)
    upper = mixture_quantile(unshifted, 1.0 - ENTROPY_TAIL)
    shapes = unshifted.shape_array
    weights = unshifted.weight_array
    lam = unshifted.rate
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)

    def integrand(x: float) -> np.ndarray:
        logs = _component_logpdf(np.array([x]), shapes, lam)[0]
        comps = np.exp(logs)
        log_f = max(float(special.logsumexp(logs + log_w)), LOG_FLOOR)
        f = float(comps @ weights)
        d_log_rate = float((weights * comps) @ (shapes - lam * x))
        return -log_f * np.concatenate(([f], comps, [d_log_rate]))

    total = np.zeros(len(shapes) + 2)
    error = 0.0
    points = _breakpoints(unshifted, upper)
    for lo, hi in zip(points[:-1], points[1:]):
        res, err, info = integrate.quad_vec(
            integrand, lo, hi, epsabs=atol / len(points), epsrel=1e-10, full_output=True
        )
        total += res
        error += float(err)
        if not getattr(info, "success", True):
            raise QuadratureError("entropy quadrature did not converge", error)
    if error > 100 * atol:
        raise QuadratureError("entropy quadrature missed its tolerance", error)

    return EntropyEstimate(
        value=float(total[0]),
        grad_weights=total[1:-1] - 1.0,
        grad_log_rate=float(total[-1]),
        upper_limit=upper,
        error=error,
    )


def mixture_entropy(m: ErlangMixture) -> float:
    """Differential entropy in nats; independent of the location shift."""
    return entropy_with_gradient(m).value


def sample_mixture(m: ErlangMixture, size: int, rng: np.random.Generator) -> np.ndarray:
    components = rng.choice(m.n, size=size, p=m.weight_array)
    return m.location + rng.gamma(m.shape_array[components], 1.0 / m.rate)


def grid_erlang_mixture(
    cdf: Callable[[float], float], beta: float, j_max: int
) -> GridErlangMixture:
    """
    Erlang mixture on shapes 1..j_max with scale beta and weights
    p_j = F(j beta) - F((j - 1) beta), renormalized over the covered mass.
    """
    if not beta > 0:
        raise MixtureError(f"beta must be positive, got {beta!r}")
    if j_max < 1:
        raise MixtureError(f"j_max must be >= 1, got {j_max!r}")

    grid = beta * np.arange(j_max + 1)
    values = np.array([cdf(float(x)) for x in grid])
    weights = np.clip(np.diff(values), 0.0, None)
    covered = float(weights.sum())
    truncated = max(0.0, 1.0 - covered)
    if truncated > 1e-3 or covered <= 0.0:
        raise MixtureError(
            f"j_max={j_max} too small for beta={beta}: truncated mass {truncated:.3g}"
        )

    weights = weights / covered
    mixture = ErlangMixture(
        weights=tuple(float(w) for w in weights),
        shapes=tuple(range(1, j_max + 1)),
        rate=1.0 / beta,
    )
    return GridErlangMixture(mixture=mixture, beta=beta, truncated_mass=truncated)
