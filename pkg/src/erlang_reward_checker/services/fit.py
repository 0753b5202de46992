"""Moment-matching fit of common-rate Erlang mixtures.

Shapes are fixed by a rule. For a fixed rate the moments are linear in the
weights, so every run first matches the moments: the log rate is searched on
a grid, the weights at each rate come from a simplex-constrained
non-negative least squares solve, and the best point is polished by
Gauss-Newton on its support. The entropy is then traded in. It is linearized
at the current point, weights and log rate move with SLSQP inside a trust box
that halves on every rejected step, and only steps that lower the true loss
are kept.

Residuals are measured in units of ``moment_tolerance`` times the
standardization, so matching the moments outweighs the entropy reward.
"""

import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from erlang_reward_checker.errors import FitError, MixtureError, QuadratureError
from erlang_reward_checker.models import ErlangMixture, FitConfig, FitResult, MomentVector
from erlang_reward_checker.services.erlang import (
    EntropyEstimate,
    entropy_with_gradient,
    mixture_moments,
)
from erlang_reward_checker.utils.concurrency import parallel_map
from erlang_reward_checker.utils.timing import Stopwatch

logger = logging.getLogger(__name__)

SHAPE_RULE_RE = re.compile(r"(dense|linear|exponential)(?::(\d+))?")
BOUND_RESIDUAL_LIMIT = 1e-2
INITIAL_TRUST_RADIUS = 1.0
MAX_TRUST_RADIUS = 4.0
MIN_TRUST_RADIUS = 1e-10

SCAN_POINTS = 241
LOCAL_SCAN_POINTS = 41
LOCAL_WINDOW = 1.0
SCAN_CANDIDATES = 3
SIMPLEX_ROW_WEIGHT = 1e3
MATCH_TIE = 1e-8


def shape_grid(rule: str, n: int) -> tuple[int, ...]:
    """Shapes a_1..a_n for ``dense``, ``linear:c`` or ``exponential:c``."""
    match = SHAPE_RULE_RE.fullmatch(rule.strip())
    if not match or n < 1:
        raise MixtureError(f"unknown shape rule '{rule}' for n={n}")
    kind, factor = match.groups()
    if kind == "dense":
        if factor:
            raise MixtureError("dense shape rule takes no factor")
        return tuple(range(1, n + 1))
    if kind == "linear":
        c = int(factor) if factor else 1
        if c < 1:
            raise MixtureError(f"linear shape factor must be >= 1, got {c}")
        return tuple(c * i for i in range(1, n + 1))
    c = int(factor) if factor else 3
    if c < 2:
        raise MixtureError(f"exponential shape base must be >= 2, got {c}")
    return tuple(c**i for i in range(1, n + 1))


def shift_target_moments(
    m: MomentVector | Sequence[float], location: float
) -> tuple[float, ...]:
    """Moments of X - location by binomial expansion over the raw moments."""
    raw = m.raw if isinstance(m, MomentVector) else tuple(m)
    if raw and location > raw[0]:
        logger.warning(
            "Location %.6g exceeds the mean %.6g; shifted mean is negative", location, raw[0]
        )
    base = (1.0, *raw)
    return tuple(
        sum(math.comb(k, j) * (-location) ** (k - j) * base[j] for j in range(k + 1))
        for k in range(1, len(raw) + 1)
    )


def residual_scales(
    targets: Sequence[float], scaling: str = "per-order", standardize: bool = True
) -> np.ndarray:
    """Divisors for the moment residuals, c = sqrt(second target moment)."""
    k = len(targets)
    if not standardize or scaling == "raw":
        return np.ones(k)
    c = math.sqrt(targets[1]) if k >= 2 else abs(targets[0])
    if c <= 0.0:
        return np.ones(k)
    orders = np.arange(1, k + 1)
    if scaling == "paper-literal":
        return np.where(orders <= 2, c**orders, c)
    return c**orders.astype(float)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} by sorting."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = idx[u - css / idx > 0][-1]
    w = np.maximum(v - css[rho - 1] / rho, 0.0)
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class _Problem:
    """Fixed data of one fit: theta = (w_1..w_n, log rate)."""

    shapes: np.ndarray
    targets: np.ndarray
    scales: np.ndarray
    gamma: float
    log_bounds: tuple[float, float]
    log_ratio: np.ndarray
    orders: np.ndarray

    @classmethod
    def build(cls, shapes, targets, scales, gamma, rate_bounds) -> "_Problem":
        a = np.asarray(shapes, dtype=float)
        orders = np.arange(1, len(targets) + 1)
        return cls(
            shapes=a,
            targets=np.asarray(targets, dtype=float),
            scales=np.asarray(scales, dtype=float),
            gamma=gamma,
            log_bounds=(math.log(rate_bounds[0]), math.log(rate_bounds[1])),
            log_ratio=special.gammaln(a[:, None] + orders) - special.gammaln(a[:, None]),
            orders=orders,
        )

    @property
    def n(self) -> int:
        return self.shapes.size

    def _terms(self, eta: float) -> np.ndarray:
        return np.exp(self.log_ratio - self.orders * eta)

    def _moments(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        terms = self._terms(theta[-1])
        return theta[:-1] @ terms, terms

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        mu, _ = self._moments(theta)
        return (self.targets - mu) / self.scales

    def mismatch(self, theta: np.ndarray) -> float:
        res = self.residuals(theta)
        return float(res @ res)

    def squared(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        mu, terms = self._moments(theta)
        res = (self.targets - mu) / self.scales
        grad_w = terms @ (-2.0 * res / self.scales)
        grad_eta = float(np.sum(2.0 * self.orders * res * mu / self.scales))
        return float(res @ res), np.append(grad_w, grad_eta)

    def feasible(self, theta: np.ndarray) -> np.ndarray:
        w = project_simplex(theta[:-1])
        return np.append(w, np.clip(theta[-1], *self.log_bounds))

    def weights_at(self, eta: float) -> np.ndarray:
        """Best simplex weights for a fixed log rate, returned as theta."""
        design = self._terms(eta).T / self.scales[:, None]
        rhs = self.targets / self.scales
        row = SIMPLEX_ROW_WEIGHT * max(1.0, float(np.linalg.norm(rhs)))
        a = np.vstack([design, np.full(self.n, row)])
        b = np.append(rhs, row)
        norms = np.linalg.norm(a, axis=0)
        try:
            v, _ = optimize.nnls(a / norms, b, maxiter=50 * self.n)
            w = v / norms
        except RuntimeError:
            w = np.linalg.lstsq(a, b, rcond=None)[0]
        if not np.all(np.isfinite(w)) or w.sum() <= 0.0:
            w = np.full(self.n, 1.0 / self.n)
        return np.append(project_simplex(w / w.sum()), eta)

    def profile(self, eta: float) -> float:
        return self.mismatch(self.weights_at(eta))

    def polish(self, theta: np.ndarray) -> np.ndarray:
        """Gauss-Newton on the support of the weights with the rate free."""
        support = np.flatnonzero(theta[:-1] > 0.0)
        lower_eta, upper_eta = self.log_bounds
        if support.size == 0 or lower_eta >= upper_eta:
            return theta
        head, last = support[:-1], support[-1]

        def unpack(x: np.ndarray) -> np.ndarray:
            w = np.zeros(self.n)
            w[head] = x[:-1]
            w[last] = 1.0 - x[:-1].sum()
            return np.append(w, x[-1])

        def jac(x: np.ndarray) -> np.ndarray:
            full = unpack(x)
            mu, terms = self._moments(full)
            d_w = (terms[head] - terms[last]).T
            d_eta = -self.orders * mu
            return -np.column_stack([d_w, d_eta]) / self.scales[:, None]

        lower = np.append(np.zeros(head.size), lower_eta)
        upper = np.append(np.ones(head.size), upper_eta)
        x0 = np.clip(np.append(theta[head], theta[-1]), lower, upper)
        result = optimize.least_squares(
            lambda x: self.residuals(unpack(x)),
            x0,
            jac=jac,
            bounds=(lower, upper),
            method="trf",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=200,
        )
        candidate = unpack(result.x)
        if not np.all(np.isfinite(candidate)) or candidate[last] < -1e-12:
            return theta
        candidate = self.feasible(candidate)
        return candidate if self.mismatch(candidate) < self.mismatch(theta) else theta

    def match(self, lower: float, upper: float, points: int) -> np.ndarray:
        """Best moment match with the log rate searched over [lower, upper]."""
        if lower >= upper:
            return self.polish(self.weights_at(lower))
        grid = np.linspace(lower, upper, points)
        values = np.array([self.profile(eta) for eta in grid])
        padded = np.concatenate(([np.inf], values, [np.inf]))
        local = np.flatnonzero((values <= padded[:-2]) & (values <= padded[2:]))
        local = sorted(local, key=lambda i: (values[i], i))[:SCAN_CANDIDATES]

        matches = []
        for i in local:
            left, right = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
            eta = grid[i]
            if left < right:
                refined = optimize.minimize_scalar(
                    self.profile, bounds=(left, right), method="bounded", options={"xatol": 1e-12}
                )
                if refined.fun <= values[i]:
                    eta = float(refined.x)
            theta = self.polish(self.weights_at(eta))
            matches.append((self.mismatch(theta), theta))
        if not matches:
            return self.weights_at(grid[0])
        floor = min(value for value, _ in matches)
        tied = [theta for value, theta in matches if value <= floor + MATCH_TIE]
        return min(tied, key=lambda theta: theta[-1])

    def mixture(self, theta: np.ndarray, location: float = 0.0) -> ErlangMixture:
        w = project_simplex(theta[:-1])
        return ErlangMixture(
            weights=tuple(float(x) for x in w),
            shapes=tuple(int(a) for a in self.shapes),
            rate=float(math.exp(theta[-1])),
            location=location,
        )

    def entropy(self, theta: np.ndarray) -> EntropyEstimate | None:
        if self.gamma == 0.0:
            return None
        return entropy_with_gradient(self.mixture(theta))

    def loss(self, theta: np.ndarray, est: EntropyEstimate | None) -> float:
        value = self.mismatch(theta)
        return value - self.gamma * est.value if est is not None else value


@dataclass(frozen=True, eq=False)
class _Start:
    theta: np.ndarray
    # (lower, upper, points) of the log-rate search; None keeps theta as given.
    window: tuple[float, float, int] | None


@dataclass(frozen=True, eq=False)
class _Run:
    theta: np.ndarray
    entropy: EntropyEstimate | None
    loss: float
    iterations: int
    converged: bool


def objective_loss(
    weights: Sequence[float],
    rate: float,
    shapes: Sequence[int],
    targets: Sequence[float],
    gamma: float = 1.0,
    scales: Sequence[float] | None = None,
) -> float:
    """L = sum_k ((t_k - mu_k) / s_k)^2 - gamma * H for an unshifted mixture."""
    mixture = ErlangMixture(tuple(weights), tuple(shapes), rate)
    scales = np.ones(len(targets)) if scales is None else scales
    problem = _Problem.build(shapes, targets, scales, gamma, (rate, rate))
    theta = np.append(mixture.weight_array, math.log(rate))
    value = problem.mismatch(theta)
    if gamma == 0.0:
        return value
    return value - gamma * entropy_with_gradient(mixture).value


def _inner_step(
    problem: _Problem, theta: np.ndarray, est: EntropyEstimate | None, radius: float
) -> tuple[np.ndarray, bool]:
    n = problem.n
    lower = np.append(np.zeros(n), problem.log_bounds[0])
    upper = np.append(np.ones(n), problem.log_bounds[1])
    linear = np.zeros(n + 1)
    if est is not None:
        lower = np.maximum(lower, theta - radius)
        upper = np.minimum(upper, theta + radius)
        linear = problem.gamma * np.append(est.grad_weights, est.grad_log_rate)

    def fun(x: np.ndarray) -> tuple[float, np.ndarray]:
        value, grad = problem.squared(x)
        return value - float(linear @ x), grad - linear

    simplex = {
        "type": "eq",
        "fun": lambda x: np.sum(x[:n]) - 1.0,
        "jac": lambda x: np.append(np.ones(n), 0.0),
    }
    result = optimize.minimize(
        fun,
        theta,
        jac=True,
        method="SLSQP",
        bounds=optimize.Bounds(lower, upper),
        constraints=[simplex],
        options={"maxiter": 200, "ftol": 1e-12},
    )
    candidate = np.asarray(result.x, dtype=float)
    if not np.all(np.isfinite(candidate)):
        raise FitError("optimizer produced non-finite parameters")
    if not result.success:
        logger.debug("inner step stopped early: %s", result.message)
    return problem.feasible(candidate), bool(result.success)


def _run(problem: _Problem, start: _Start, cfg: FitConfig) -> _Run:
    theta = problem.feasible(start.theta)
    if start.window is not None:
        matched = problem.match(*start.window)
        if problem.mismatch(matched) <= problem.mismatch(theta):
            theta = matched
    est = problem.entropy(theta)
    loss = problem.loss(theta, est)
    if not math.isfinite(loss):
        raise FitError("objective is not finite at the starting point")

    radius = INITIAL_TRUST_RADIUS
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_outer_iterations + 1):
        candidate, solved = _inner_step(problem, theta, est, radius)
        candidate_est = problem.entropy(candidate)
        candidate_loss = problem.loss(candidate, candidate_est)
        if not math.isfinite(candidate_loss):
            raise FitError("objective is not finite")

        improvement = loss - candidate_loss
        if improvement > 0.0:
            theta, est, loss = candidate, candidate_est, candidate_loss
            radius = min(2.0 * radius, MAX_TRUST_RADIUS)
            logger.debug("iteration %d: loss=%.12g step=%.3g", iterations, loss, improvement)
            if solved and improvement < cfg.epsilon:
                converged = True
                break
            continue

        # Without an entropy term the inner step already minimized over the whole box.
        if est is None:
            converged = solved
            break
        radius /= 2.0
        if radius < MIN_TRUST_RADIUS:
            converged = solved
            break

    return _Run(theta=theta, entropy=est, loss=loss, iterations=iterations, converged=converged)


def _embed(warm: ErlangMixture, problem: _Problem, location: float) -> np.ndarray | None:
    grid = [int(a) for a in problem.shapes]
    weights = np.zeros(problem.n)
    for w, a in zip(warm.weights, warm.shapes):
        if w == 0.0:
            continue
        if a not in grid or abs(warm.location - location) > 1e-12 * max(1.0, location):
            logger.warning("Warm start does not embed on shapes %s; ignored", grid)
            return None
        weights[grid.index(a)] += w
    return np.append(weights, math.log(warm.rate))


def _starts(problem: _Problem, cfg: FitConfig, warm: np.ndarray | None) -> list[_Start]:
    """Restart 0 scans the whole rate range, the others a window around a jittered rate."""
    low, high = problem.log_bounds

    def log_rate_for(w: np.ndarray) -> float:
        return float(np.clip(math.log(w @ problem.shapes / problem.targets[0]), low, high))

    uniform = np.full(problem.n, 1.0 / problem.n)
    starts = [_Start(np.append(uniform, log_rate_for(uniform)), (low, high, SCAN_POINTS))]
    for restart in range(1, max(1, cfg.restarts)):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, restart]))
        w = rng.dirichlet(np.ones(problem.n))
        eta = float(np.clip(log_rate_for(w) + rng.uniform(-LOCAL_WINDOW, LOCAL_WINDOW), low, high))
        window = (max(low, eta - LOCAL_WINDOW), min(high, eta + LOCAL_WINDOW), LOCAL_SCAN_POINTS)
        starts.append(_Start(np.append(w, eta), window))
    if warm is not None:
        starts.append(_Start(warm, None))
    return starts


def _check_config(cfg: FitConfig) -> None:
    if cfg.k < 1 or cfg.n < 1:
        raise FitError(f"K and n must be >= 1, got K={cfg.k}, n={cfg.n}")
    if cfg.gamma < 0:
        raise FitError(f"entropy weight must be >= 0, got {cfg.gamma}")
    if cfg.moment_tolerance <= 0:
        raise FitError(f"moment tolerance must be positive, got {cfg.moment_tolerance}")
    low, high = cfg.rate_bounds
    if not 0 < low <= high:
        raise FitError(f"rate bounds must be positive and ordered, got {cfg.rate_bounds}")


def _location(raw: tuple[float, ...], rule: str) -> float:
    if rule == "zero" or len(raw) < 2:
        return 0.0
    sigma = math.sqrt(max(raw[1] - raw[0] ** 2, 0.0))
    return max(0.0, raw[0] - sigma)


def fit_mixture(
    m: MomentVector,
    cfg: FitConfig | None = None,
    warm_start: ErlangMixture | None = None,
    threads: int | None = None,
) -> FitResult:
    """
    Fit an n-component Erlang mixture to the first K raw moments.

    Args:
        m: Raw moments of the target (at least cfg.k of them).
        cfg: Fit configuration; defaults come from settings.
        warm_start: Mixture embedded on the shape grid as an extra start.
        threads: Worker cap for the restarts.

    Returns:
        The best restart by loss, ties broken by the lower rate.
    """
    cfg = cfg or FitConfig.from_settings()
    _check_config(cfg)
    watch = Stopwatch()

    raw = tuple(m.raw[: cfg.k])
    if len(raw) < cfg.k:
        raise FitError(f"fit needs {cfg.k} moments, got {len(raw)}")
    if len(raw) >= 2 and raw[1] - raw[0] ** 2 <= 1e-12 * max(1.0, raw[1]):
        raise FitError("target variance is zero; decide the point mass exactly")

    location = _location(raw, cfg.location_rule)
    targets = shift_target_moments(raw, location)
    if targets[0] <= 0.0:
        raise FitError(f"shifted mean must be positive, got {targets[0]!r}")

    shapes = shape_grid(cfg.shape_rule, cfg.n)
    standardization = residual_scales(targets, cfg.scaling, cfg.standardize_residuals)
    problem = _Problem.build(
        shapes, targets, standardization * cfg.moment_tolerance, cfg.gamma, cfg.rate_bounds
    )
    warm = _embed(warm_start, problem, location) if warm_start is not None else None
    starts = _starts(problem, cfg, warm)

    runs = parallel_map(lambda start: _run(problem, start, cfg), starts, threads)
    floor = min(run.loss for run in runs)
    tied = [i for i, run in enumerate(runs) if run.loss <= floor + cfg.epsilon]
    best_index = min(tied, key=lambda i: (runs[i].theta[-1], i))
    best = runs[best_index]

    mixture = problem.mixture(best.theta, location)
    if best.entropy is not None:
        entropy, upper_limit = best.entropy.value, best.entropy.upper_limit
    else:
        try:
            estimate = entropy_with_gradient(mixture)
            entropy, upper_limit = estimate.value, estimate.upper_limit
        except QuadratureError as e:
            logger.warning("Entropy of the fitted mixture unavailable: %s", e)
            entropy, upper_limit = float("nan"), float("nan")

    _, fitted = mixture_moments(mixture, cfg.k)
    moment_residuals = tuple(abs(t - f) for t, f in zip(raw, fitted))
    standardized = tuple(
        float(abs(r)) for r in problem.residuals(best.theta) * cfg.moment_tolerance
    )

    notes = []
    at_bound = bool(
        np.isclose(best.theta[-1], problem.log_bounds[0], atol=1e-9)
        or np.isclose(best.theta[-1], problem.log_bounds[1], atol=1e-9)
    )
    if at_bound and max(standardized) > BOUND_RESIDUAL_LIMIT:
        notes.append(
            f"rate {mixture.rate:.6g} at its bound {cfg.rate_bounds} with residual "
            f"{max(standardized):.3g}; the fit is likely infeasible"
        )
    minimum_n = cfg.k // 2 + 1
    if cfg.n < minimum_n:
        notes.append(f"n={cfg.n} is below {minimum_n} components recommended for K={cfg.k}")
    if not best.converged:
        notes.append(f"best restart did not converge in {best.iterations} iterations")
    for note in notes:
        logger.warning(note)

    logger.info(
        "Fitted K=%d n=%d (%s): loss=%.6g iterations=%d converged=%s restart=%d/%d",
        cfg.k,
        cfg.n,
        cfg.shape_rule,
        best.loss,
        best.iterations,
        best.converged,
        best_index,
        len(runs),
    )
    return FitResult(
        mixture=mixture,
        loss=best.loss,
        moment_residuals=moment_residuals,
        standardized_residuals=standardized,
        entropy=entropy,
        iterations=best.iterations,
        converged=best.converged,
        wall_time=watch.total(),
        target_moments=targets,
        restarts=len(runs),
        best_restart=best_index,
        entropy_upper_limit=upper_limit,
        shape_rule=cfg.shape_rule,
        rate_at_bound=at_bound,
        warnings=tuple(notes),
    )
