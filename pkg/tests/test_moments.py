"""Unit tests for the moment recurrence and derived statistics."""

import math

import pytest

from erlang_reward_checker.config import settings
from erlang_reward_checker.errors import MomentSolverError
from erlang_reward_checker.models import Dtmc, MomentVector
from erlang_reward_checker.services.moments import derived_stats, moment_system, reward_moments


class TestRewardMoments:
    def test_geometric_hand_values(self, geometric):
        table = reward_moments(geometric, 3)
        mu1, mu2, mu3 = table.vector.raw
        assert mu1 == pytest.approx(2.0, abs=1e-10)
        assert mu2 == pytest.approx(6.0, abs=1e-10)
        assert mu3 == pytest.approx(26.0, abs=1e-9)
        assert table.solver == "dense-lu"

    def test_deterministic_point_mass(self, deterministic):
        assert reward_moments(deterministic, 3).vector.raw == pytest.approx((3.0, 9.0, 27.0))

    def test_long_tail(self, bundled):
        raw = reward_moments(bundled("long_tail"), 3).vector.raw
        assert raw == pytest.approx((10.0, 190.0, 5410.0), rel=1e-10)

    def test_zero_rewards(self, geometric):
        d = Dtmc(
            states=geometric.states,
            initial=geometric.initial,
            transitions=geometric.transitions,
            state_rewards={state: 0.0 for state in geometric.states},
            absorbing=geometric.absorbing,
        )
        assert reward_moments(d, 3).vector.raw == (0.0, 0.0, 0.0)

    def test_per_state_table(self, deterministic):
        table = reward_moments(deterministic, 2)
        assert table.at("a", 1) == pytest.approx(3.0)
        assert table.at("b", 1) == pytest.approx(2.0)
        assert table.at("b", 2) == pytest.approx(4.0)
        assert table.at("done", 1) == 0.0

    def test_k_must_be_positive(self, geometric):
        with pytest.raises(MomentSolverError):
            reward_moments(geometric, 0)

    def test_singular_system(self):
        d = Dtmc(
            states=("a", "b", "c"),
            initial="a",
            transitions={("a", "b"): 1.0, ("b", "a"): 1.0, ("c", "c"): 1.0},
            state_rewards={"a": 1.0, "b": 1.0},
            absorbing=frozenset({"c"}),
        )
        with pytest.raises(MomentSolverError, match="singular"):
            reward_moments(d, 2)

    def test_state_order_does_not_matter(self, random_chains):
        d = random_chains[7]
        shuffled = Dtmc(
            states=tuple(reversed(d.states)),
            initial=d.initial,
            transitions=d.transitions,
            state_rewards=d.state_rewards,
            absorbing=d.absorbing,
        )
        assert reward_moments(shuffled, 3).vector.raw == pytest.approx(
            reward_moments(d, 3).vector.raw, rel=1e-10
        )

    def test_hankel_nonnegative(self, random_chains):
        for d in random_chains:
            mu1, mu2 = reward_moments(d, 2).vector.raw
            assert mu2 - mu1 * mu1 >= -1e-9

    def test_iterative_solver_agrees(self, random_chains, monkeypatch):
        d = random_chains[12]
        dense = reward_moments(d, 3).vector.raw
        monkeypatch.setattr(settings, "dense_solver_limit", 1)
        table = reward_moments(d, 3)
        assert table.solver == "bicgstab-ilu"
        assert table.vector.raw == pytest.approx(dense, rel=1e-8)

    def test_moment_system_excludes_absorbing(self, geometric):
        system = moment_system(geometric)
        assert system.transient_states == ("s",)
        assert system.p_cc.toarray().tolist() == [[0.5]]


class TestDerivedStats:
    def test_variance_and_sigma(self):
        m = derived_stats(MomentVector(raw=(2.0, 6.0)))
        assert m.variance == pytest.approx(2.0)
        assert m.sigma == pytest.approx(math.sqrt(2.0))

    @pytest.mark.parametrize("raw", [(3.0, 9.0, 27.0), (0.0, 0.0, 0.0)])
    def test_zero_variance(self, raw):
        m = derived_stats(MomentVector(raw=raw))
        assert m.variance == 0.0
        assert m.sigma == 0.0

    def test_per_order_scaling(self):
        m = derived_stats(MomentVector(raw=(2.0, 6.0, 26.0)), scaling="per-order")
        assert m.standardized == pytest.approx((26.0 / 6.0**1.5,))

    def test_paper_literal_scaling(self):
        m = derived_stats(MomentVector(raw=(2.0, 6.0, 26.0)), scaling="paper-literal")
        assert m.standardized == pytest.approx((26.0 / math.sqrt(6.0),))

    def test_inconsistent_moments(self):
        with pytest.raises(MomentSolverError, match="inconsistent"):
            derived_stats(MomentVector(raw=(2.0, 3.0)))
