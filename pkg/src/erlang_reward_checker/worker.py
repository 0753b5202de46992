import logging
from collections.abc import Sequence
from dataclasses import replace

from erlang_reward_checker.models import (
    EmpiricalDistribution,
    FitConfig,
    FitResult,
    GridRow,
    MomentVector,
)
from erlang_reward_checker.services.fit import fit_mixture
from erlang_reward_checker.services.simulation import ks_statistic

logger = logging.getLogger(__name__)


def _row(
    cfg: FitConfig,
    result: FitResult,
    t_moments: float,
    samples: EmpiricalDistribution | None,
) -> GridRow:
    return GridRow(
        k=cfg.k,
        n=cfg.n,
        shape_rule=cfg.shape_rule,
        loss=result.loss,
        iterations=result.iterations,
        converged=result.converged,
        t_opt=result.wall_time,
        t_total=t_moments + result.wall_time,
        max_standardized_residual=max(result.standardized_residuals),
        ks=ks_statistic(samples, result.mixture) if samples is not None else None,
    )


def run_fit_grid(
    moments: MomentVector,
    k_values: Sequence[int],
    n_values: Sequence[int],
    cfg: FitConfig | None = None,
    samples: EmpiricalDistribution | None = None,
    t_moments: float = 0.0,
    threads: int | None = None,
) -> list[GridRow]:
    """
    Fit every (K, n) cell with the configured shape rule.

    Within one K the best n-component mixture warm-starts the n+1 fit, so the
    loss never grows along a row.
    """
    cfg = cfg or FitConfig.from_settings()
    rows: list[GridRow] = []
    for k in sorted(k_values):
        previous: FitResult | None = None
        for n in sorted(n_values):
            cell = replace(cfg, k=k, n=n)
            result = fit_mixture(
                moments,
                cell,
                warm_start=previous.mixture if previous is not None else None,
                threads=threads,
            )
            rows.append(_row(cell, result, t_moments, samples))
            logger.info("Grid cell K=%d n=%d: loss=%.6g", k, n, result.loss)
            previous = result
    return rows


def compare_shape_rules(
    moments: MomentVector,
    rules: Sequence[str],
    cfg: FitConfig | None = None,
    samples: EmpiricalDistribution | None = None,
    t_moments: float = 0.0,
    threads: int | None = None,
) -> list[GridRow]:
    """Fit the same (K, n) once per shape rule."""
    cfg = cfg or FitConfig.from_settings()
    rows = []
    for rule in rules:
        cell = replace(cfg, shape_rule=rule)
        result = fit_mixture(moments, cell, threads=threads)
        rows.append(_row(cell, result, t_moments, samples))
        logger.info("Shape rule %s: loss=%.6g", rule, result.loss)
    return rows
