import time
from typing import Any, TypedDict

from langgraph.graph import END, StateGraph

from erlang_reward_checker.config import settings
from erlang_reward_checker.models import (
    BoundAttempt,
    ChanceConstraint,
    Dtmc,
    FitConfig,
    MomentVector,
    Verdict,
)
from erlang_reward_checker.services.checker import (
    decide_by_bound,
    decide_by_fit,
    decide_degenerate,
    is_degenerate,
    undetermined,
)
from erlang_reward_checker.services.dtmc import reward_lattice
from erlang_reward_checker.services.moments import reward_moments


class ChanceCheckState(TypedDict):
    chain: Dtmc
    constraint: ChanceConstraint
    config: FitConfig
    orders: tuple[int, ...]
    bound_only: bool
    margin: float
    threads: int | None
    moments: MomentVector | None
    attempts: tuple[BoundAttempt, ...]
    verdict: Verdict | None
    timings: dict[str, float]


def compute_moments(state: ChanceCheckState) -> dict[str, Any]:
    start = time.perf_counter()
    k = max(state["config"].k, max(state["orders"], default=2), 2)
    table = reward_moments(state["chain"], k, scaling=state["config"].scaling)
    timings = {**state["timings"], "moments": time.perf_counter() - start}
    return {"moments": table.vector, "timings": timings}


def degenerate(state: ChanceCheckState) -> dict[str, Any]:
    return {"verdict": decide_degenerate(state["moments"], state["constraint"])}


def bounds(state: ChanceCheckState) -> dict[str, Any]:
    verdict, attempts = decide_by_bound(
        state["moments"], state["constraint"], state["orders"]
    )
    if verdict is None and state["bound_only"]:
        verdict = undetermined(state["moments"], attempts)
    return {"verdict": verdict, "attempts": attempts}


def fitted(state: ChanceCheckState) -> dict[str, Any]:
    start = time.perf_counter()
    verdict = decide_by_fit(
        state["moments"],
        state["constraint"],
        state["config"],
        state["margin"],
        attempts=state["attempts"],
        threads=state["threads"],
        lattice=reward_lattice(state["chain"]),
    )
    timings = {**state["timings"], "opt": time.perf_counter() - start}
    return {"verdict": verdict, "timings": timings}


def _after_moments(state: ChanceCheckState) -> str:
    return "degenerate" if is_degenerate(state["moments"]) else "bounds"


def _after_bounds(state: ChanceCheckState) -> str:
    return "done" if state["verdict"] is not None else "fitted"


def _build_graph():
    graph = StateGraph(ChanceCheckState)
    graph.add_node("compute_moments", compute_moments)
    graph.add_node("degenerate", degenerate)
    graph.add_node("bounds", bounds)
    graph.add_node("fitted", fitted)
    graph.set_entry_point("compute_moments")
    graph.add_conditional_edges(
        "compute_moments", _after_moments, {"degenerate": "degenerate", "bounds": "bounds"}
    )
    graph.add_conditional_edges("bounds", _after_bounds, {"done": END, "fitted": "fitted"})
    graph.add_edge("degenerate", END)
    graph.add_edge("fitted", END)
    return graph.compile()


_graph = _build_graph()


def run_chance_check(
    d: Dtmc,
    c: ChanceConstraint,
    cfg: FitConfig | None = None,
    orders: tuple[int, ...] | None = None,
    bound_only: bool = False,
    margin: float | None = None,
    threads: int | None = None,
) -> ChanceCheckState:
    """Run the pipeline and return its final state (moments, verdict, timings)."""
    cfg = cfg or FitConfig.from_settings()
    if orders is None:
        orders = tuple(range(2, max(cfg.k, 2) + 1))
    return _graph.invoke(
        {
            "chain": d,
            "constraint": c,
            "config": cfg,
            "orders": tuple(orders),
            "bound_only": bound_only,
            "margin": settings.marginal_margin if margin is None else margin,
            "threads": threads,
            "moments": None,
            "attempts": (),
            "verdict": None,
            "timings": {},
        }
    )


def check_chance_constraint(
    d: Dtmc,
    c: ChanceConstraint,
    cfg: FitConfig | None = None,
    orders: tuple[int, ...] | None = None,
    bound_only: bool = False,
    margin: float | None = None,
    threads: int | None = None,
) -> Verdict:
    """
    Decide Pr(X <= r*) >= alpha (or the at-least / interval forms) for the
    reward to absorption of ``d``.

    Moments first; a point mass is decided exactly; then the tail bounds in
    ascending order; the fitted mixture CDF only when no bound certifies.
    """
    state = run_chance_check(d, c, cfg, orders, bound_only, margin, threads)
    return state["verdict"]
