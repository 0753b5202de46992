import json
import logging
import math
from dataclasses import asdict
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field

from erlang_reward_checker import __version__
from erlang_reward_checker.config import settings
from erlang_reward_checker.models import Dtmc, FitConfig, FitResult, MomentVector, Verdict
from erlang_reward_checker.repositories.mixtures import load_mixture, save_mixture
from erlang_reward_checker.repositories.model_files import load_model
from erlang_reward_checker.repositories.samples import read_samples, write_cdf_grid, write_samples
from erlang_reward_checker.services.checker import parse_property
from erlang_reward_checker.services.dtmc import (
    discretize_rewards,
    expected_steps_to_absorption,
    reach_to_absorption,
    validate,
)
from erlang_reward_checker.services.erlang import mixture_cdf, mixture_quantile
from erlang_reward_checker.services.fit import fit_mixture
from erlang_reward_checker.services.moments import reward_moments
from erlang_reward_checker.services.simulation import (
    empirical_cdf_grid,
    ks_statistic,
    simulate_rewards,
)
from erlang_reward_checker.utils.timing import Stopwatch
from erlang_reward_checker.worker import compare_shape_rules, run_fit_grid
from erlang_reward_checker.workflows.chance_check import run_chance_check

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILS = 1
EXIT_UNDECIDED = 2
DKW_CONFIDENCE = 1e-3


class Report(BaseModel):
    """
    The machine-readable result of one command.

    Timings are kept under their own key so two runs with the same inputs
    compare equal once ``timings`` is dropped.
    """

    tool: str = "erlang-reward-checker"
    version: str = __version__
    command: dict[str, Any]
    model_digest: str | None = None
    payload: dict[str, Any]
    warnings: list[str] = Field(default_factory=list)
    timings: dict[str, float] = Field(default_factory=dict)
    exit_code: int = Field(default=EXIT_OK, exclude=True)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)


class ModelRequest(BaseModel):
    command: str
    model: str
    target: str | None = None
    mode: Literal["probability", "reward"] = "reward"
    discretize: float | None = Field(default=None, gt=0)
    keep_transition_rewards: bool = False
    seed: int = Field(default_factory=lambda: settings.default_seed)
    threads: int | None = Field(default=None, ge=1)

    def echo(self) -> dict[str, Any]:
        return self.model_dump(exclude={"threads"})


class ValidateRequest(ModelRequest):
    command: str = "validate"


class MomentsRequest(ModelRequest):
    command: str = "moments"
    k: int = Field(default=3, ge=1)


class FitRequest(ModelRequest):
    command: str = "fit"
    k: int = Field(default=3, ge=1)
    n: int = Field(default=3, ge=1)
    shapes: str = "exponential:3"
    gamma: float = Field(default=1.0, ge=0)
    restarts: int = Field(default_factory=lambda: settings.fit_restarts, ge=1)
    out: str | None = None
    cdf_grid: int | None = Field(default=None, ge=2)
    cdf_out: str | None = None

    def fit_config(self) -> FitConfig:
        return FitConfig.from_settings(
            k=self.k,
            n=self.n,
            shape_rule=self.shapes,
            gamma=self.gamma,
            restarts=self.restarts,
            seed=self.seed,
        )


class CheckRequest(FitRequest):
    command: str = "check"
    property: str
    orders: list[int] | None = None
    bound_only: bool = False
    margin: float = Field(default_factory=lambda: settings.marginal_margin, ge=0)


class SimulateRequest(ModelRequest):
    command: str = "simulate"
    runs: int = Field(default=100_000, ge=1)
    max_steps: int = Field(default_factory=lambda: settings.sim_max_steps, ge=1)
    out: str | None = None
    cdf_grid: int | None = Field(default=None, ge=2)
    cdf_out: str | None = None


class CompareRequest(FitRequest):
    command: str = "compare"
    model: str | None = None
    mixture: str | None = None
    samples: str | None = None
    runs: int = Field(default=100_000, ge=1)


class GridRequest(FitRequest):
    command: str = "grid"
    k_range: list[int] = Field(default_factory=lambda: [3, 4, 5])
    n_range: list[int] = Field(default_factory=lambda: list(range(3, 10)))
    shape_rules: list[str] | None = None
    samples: str | None = None


def _record(obj) -> dict[str, Any]:
    return asdict(obj)


def _moments_payload(m: MomentVector) -> dict[str, Any]:
    return {
        "k": m.k,
        "raw": list(m.raw),
        "mean": m.mean,
        "variance": m.variance,
        "sigma": m.sigma,
        "standardized": list(m.standardized),
        "scaling": m.scaling,
    }


def _prepare_model(request: ModelRequest, strict: bool = True) -> tuple[Dtmc, str]:
    d, digest = load_model(
        request.model,
        strict=strict,
        eliminate_transition_rewards=not request.keep_transition_rewards,
    )
    if request.target is not None:
        d = reach_to_absorption(d, request.target, request.mode)
    if request.discretize is not None:
        d = discretize_rewards(d, request.discretize)
    return d, digest


def _cdf_points(fit: FitResult, points: int) -> list[tuple[float, float]]:
    upper = mixture_quantile(fit.mixture, 0.999)
    xs = np.linspace(0.0, upper, points)
    return list(zip(xs.tolist(), np.atleast_1d(mixture_cdf(fit.mixture, xs)).tolist()))


def validate_model(request: ValidateRequest) -> Report:
    d, digest = _prepare_model(request, strict=False)
    issues = validate(d)
    payload: dict[str, Any] = {
        "valid": not issues,
        "states": d.size,
        "transitions": len(d.transitions),
        "absorbing": sorted(d.absorbing),
        "issues": [_record(issue) for issue in issues],
    }
    if not issues:
        _, steps = expected_steps_to_absorption(d)
        payload["expected_steps"] = steps
    logger.info("%s: %s", request.model, "valid" if not issues else f"{len(issues)} issue(s)")
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload=payload,
        exit_code=EXIT_OK if not issues else EXIT_FAILS,
    )


def compute_moments(request: MomentsRequest) -> Report:
    watch = Stopwatch()
    d, digest = _prepare_model(request)
    with watch.lap("T_moments"):
        table = reward_moments(d, request.k)
    payload = _moments_payload(table.vector)
    payload["solver"] = table.solver
    payload["transient_states"] = len(table.transient_states)
    logger.info("Moments at %s: %s", d.initial, ", ".join(f"{x:.6g}" for x in table.vector.raw))
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload=payload,
        timings={**watch.laps, "T_total": watch.total()},
    )


def fit_model(request: FitRequest) -> Report:
    watch = Stopwatch()
    d, digest = _prepare_model(request)
    cfg = request.fit_config()
    with watch.lap("T_moments"):
        table = reward_moments(d, cfg.k, scaling=cfg.scaling)
    with watch.lap("T_opt"):
        fit = fit_mixture(table.vector, cfg, threads=request.threads)

    payload = {"moments": _moments_payload(table.vector), "fit": _record(fit)}
    payload["fit"].pop("wall_time")
    if request.out:
        save_mixture(request.out, fit.mixture)
    if request.cdf_grid:
        points = _cdf_points(fit, request.cdf_grid)
        if request.cdf_out:
            write_cdf_grid(request.cdf_out, points)
        else:
            payload["cdf_grid"] = [list(p) for p in points]

    logger.info(
        "Fitted %d components: loss=%.6g converged=%s", cfg.n, fit.loss, fit.converged
    )
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload=payload,
        warnings=list(fit.warnings),
        timings={**watch.laps, "T_total": watch.total()},
    )


def check_property(request: CheckRequest) -> Report:
    watch = Stopwatch()
    constraint = parse_property(request.property)
    d, digest = _prepare_model(request)
    state = run_chance_check(
        d,
        constraint,
        cfg=request.fit_config(),
        orders=tuple(request.orders) if request.orders else None,
        bound_only=request.bound_only,
        margin=request.margin,
        threads=request.threads,
    )
    verdict: Verdict = state["verdict"]
    payload = {
        "property": constraint.describe(),
        "moments": _moments_payload(state["moments"]),
        "verdict": _record(verdict),
    }
    if verdict.fit is not None:
        payload["verdict"]["fit"].pop("wall_time")

    if verdict.decision == "undetermined_by_bound" or verdict.marginal:
        exit_code = EXIT_UNDECIDED
    elif verdict.decision == "holds":
        exit_code = EXIT_OK
    else:
        exit_code = EXIT_FAILS

    low, high = verdict.probability_estimate
    logger.info(
        "%s %s by %s (Pr in [%.6g, %.6g])%s",
        constraint.describe(),
        verdict.decision,
        verdict.method,
        low,
        high,
        ", marginal" if verdict.marginal else "",
    )
    timings = {f"T_{name}": value for name, value in state["timings"].items()}
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload=payload,
        warnings=list(verdict.fit.warnings) if verdict.fit is not None else [],
        timings={**timings, "T_total": watch.total()},
        exit_code=exit_code,
    )


def _sample_summary(samples: np.ndarray) -> dict[str, Any]:
    return {
        "count": int(samples.size),
        "mean": float(np.mean(samples)),
        "variance": float(np.var(samples)),
        "raw_moments": [float(np.mean(samples**k)) for k in (1, 2, 3)],
        "min": float(samples[0]),
        "max": float(samples[-1]),
    }


def simulate_model(request: SimulateRequest) -> Report:
    watch = Stopwatch()
    d, digest = _prepare_model(request)
    with watch.lap("T_sim"):
        e = simulate_rewards(
            d, request.runs, seed=request.seed, max_steps=request.max_steps, threads=request.threads
        )

    notes = []
    if e.truncated_runs > 1e-3 * e.run_count:
        notes.append(
            f"{e.truncated_runs} of {e.run_count} runs hit the {request.max_steps}-step cap"
        )
    payload: dict[str, Any] = {
        "runs": e.run_count,
        "truncated_runs": e.truncated_runs,
        "seed": e.seed,
    }
    if e.size:
        payload["samples"] = _sample_summary(e.samples)
    if request.out:
        write_samples(request.out, e)
    if request.cdf_grid and e.size:
        xs, ys = empirical_cdf_grid(e, request.cdf_grid)
        points = list(zip(xs.tolist(), ys.tolist()))
        if request.cdf_out:
            write_cdf_grid(request.cdf_out, points)
        else:
            payload["cdf_grid"] = [list(p) for p in points]

    logger.info("Simulated %d runs, %d truncated", e.run_count, e.truncated_runs)
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload=payload,
        warnings=notes,
        timings={**watch.laps, "T_total": watch.total()},
    )


def compare_fit(request: CompareRequest) -> Report:
    """D_KS between a mixture (file or fresh fit) and samples (file or fresh simulation)."""
    watch = Stopwatch()
    digest = None
    d = None
    if request.model is not None:
        d, digest = _prepare_model(request)
    elif request.mixture is None or request.samples is None:
        raise ValueError("compare needs a model unless both --mixture and --samples are given")

    if request.mixture is not None:
        mixture = load_mixture(request.mixture)
    else:
        cfg = request.fit_config()
        with watch.lap("T_moments"):
            table = reward_moments(d, cfg.k, scaling=cfg.scaling)
        with watch.lap("T_opt"):
            mixture = fit_mixture(table.vector, cfg, threads=request.threads).mixture

    if request.samples is not None:
        e = read_samples(request.samples, seed=request.seed)
    else:
        with watch.lap("T_sim"):
            e = simulate_rewards(d, request.runs, seed=request.seed, threads=request.threads)

    ks = ks_statistic(e, mixture)
    dkw = math.sqrt(math.log(2.0 / DKW_CONFIDENCE) / (2.0 * e.size))
    logger.info("D_KS = %.6g over %d samples (DKW bound %.6g)", ks, e.size, dkw)
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload={
            "ks": ks,
            "samples": e.size,
            "dkw_bound": dkw,
            "mixture": mixture.to_record(),
        },
        timings={**watch.laps, "T_total": watch.total()},
    )


def sweep_grid(request: GridRequest) -> Report:
    watch = Stopwatch()
    d, digest = _prepare_model(request)
    cfg = request.fit_config()
    k_max = max([*request.k_range, cfg.k])
    with watch.lap("T_moments"):
        table = reward_moments(d, k_max, scaling=cfg.scaling)
    samples = read_samples(request.samples) if request.samples else None
    t_moments = watch.laps["T_moments"]

    with watch.lap("T_opt"):
        rows = run_fit_grid(
            table.vector,
            request.k_range,
            request.n_range,
            cfg,
            samples=samples,
            t_moments=t_moments,
            threads=request.threads,
        )
        rule_rows = []
        if request.shape_rules:
            rule_rows = compare_shape_rules(
                table.vector,
                request.shape_rules,
                cfg,
                samples=samples,
                t_moments=t_moments,
                threads=request.threads,
            )

    cell_timings: dict[str, float] = {}
    grid_cells, rule_cells = [], []
    for source, target in ((rows, grid_cells), (rule_rows, rule_cells)):
        for row in source:
            cell = _record(row)
            key = f"K{row.k}/n{row.n}/{row.shape_rule}"
            cell_timings[f"{key}/T_opt"] = cell.pop("t_opt")
            cell_timings[f"{key}/T_total"] = cell.pop("t_total")
            target.append(cell)

    logger.info("Grid of %d cells finished", len(rows) + len(rule_rows))
    return Report(
        command=request.echo(),
        model_digest=digest,
        payload={
            "grid": grid_cells,
            "shape_rules": rule_cells,
        },
        timings={**watch.laps, **cell_timings, "T_total": watch.total()},
    )


HANDLERS = {
    "validate": (ValidateRequest, validate_model),
    "moments": (MomentsRequest, compute_moments),
    "fit": (FitRequest, fit_model),
    "check": (CheckRequest, check_property),
    "simulate": (SimulateRequest, simulate_model),
    "compare": (CompareRequest, compare_fit),
    "grid": (GridRequest, sweep_grid),
}
