from unittest.mock import patch

import pytest

from erlang_reward_checker.models import ChanceConstraint, FitConfig
from erlang_reward_checker.workflows.chance_check import (
    check_chance_constraint,
    run_chance_check,
)

FAST = FitConfig(k=3, n=3, restarts=2)


class TestChanceCheckWorkflow:
    def test_point_mass_decided_exactly(self, deterministic):
        verdict = check_chance_constraint(deterministic, ChanceConstraint(4.0, 0.9), FAST)
        assert verdict.decision == "holds"
        assert verdict.method == "degenerate"
        assert verdict.probability_estimate == (1.0, 1.0)

    def test_bound_certifies_without_fit(self, geometric):
        with patch("erlang_reward_checker.services.checker.fit_mixture") as fit:
            verdict = check_chance_constraint(geometric, ChanceConstraint(5.0, 0.5), FAST)
        fit.assert_not_called()
        assert verdict.decision == "holds"
        assert verdict.method == "cantelli(2)"
        assert verdict.probability_estimate[0] == pytest.approx(0.818, abs=1e-3)

    def test_falls_back_to_fitted_cdf(self, geometric):
        state = run_chance_check(geometric, ChanceConstraint(1.0, 0.9), FAST)
        verdict = state["verdict"]
        assert verdict.method == "fitted_cdf"
        assert verdict.decision == "fails"
        assert abs(verdict.probability_estimate[0] - 0.5) <= 0.1
        assert set(state["timings"]) == {"moments", "opt"}

    def test_threshold_below_mean_skips_bounds(self, geometric):
        state = run_chance_check(geometric, ChanceConstraint(1.0, 0.9), FAST)
        assert state["attempts"] == ()
        assert not state["verdict"].undetermined_by_bound

    def test_failed_bounds_reported_with_fit(self, geometric):
        verdict = check_chance_constraint(geometric, ChanceConstraint(3.0, 0.95), FAST)
        assert verdict.method == "fitted_cdf"
        assert verdict.undetermined_by_bound
        assert [a.order for a in verdict.bound_attempts] == [2, 3]

    def test_bound_only(self, geometric):
        with patch("erlang_reward_checker.services.checker.fit_mixture") as fit:
            verdict = check_chance_constraint(
                geometric, ChanceConstraint(5.0, 0.9), FAST, bound_only=True
            )
        fit.assert_not_called()
        assert verdict.decision == "undetermined_by_bound"
        assert [a.order for a in verdict.bound_attempts] == [2, 3]

    def test_interval(self, geometric):
        verdict = check_chance_constraint(
            geometric, ChanceConstraint(0.5, 0.4, "between", 10.0), FAST, orders=(2,)
        )
        assert verdict.decision == "holds"
        assert verdict.method == "cantelli(2)"

    def test_moments_cover_requested_orders(self, geometric):
        state = run_chance_check(
            geometric, ChanceConstraint(5.0, 0.5), FitConfig(k=2), orders=(2, 4)
        )
        assert state["moments"].k == 4
