"""Unit tests for the dtmc v1 model reader."""

import pytest

from erlang_reward_checker.errors import ModelError, ModelParseError
from erlang_reward_checker.services.model_parser import parse_float, parse_model, parse_name

TWO_STATE = """\
dtmc v1
state s0 reward=3
state s1 reward=0 absorbing
trans s0 s1 p=1.0
initial s0
"""


class TestParseFloat:
    def test_parse_float_plain(self):
        value, error = parse_float("2.5", 3, 7, "reward")
        assert value == 2.5
        assert error is None

    def test_parse_float_exponent(self):
        value, error = parse_float("1e-3", 1, 1, "p")
        assert value == pytest.approx(0.001)
        assert error is None

    @pytest.mark.parametrize("text", ["nan", "inf", "1,5", "abc", ""])
    def test_parse_float_rejects(self, text):
        value, error = parse_float(text, 4, 9, "reward")
        assert value is None
        assert error.line == 4
        assert error.column == 9
        assert "Invalid reward value" in error.message


class TestParseName:
    def test_parse_name_valid(self):
        assert parse_name("plan_1.a", 1, 1) == ("plan_1.a", None)

    def test_parse_name_invalid(self):
        name, error = parse_name("1abc", 2, 5)
        assert name is None
        assert "Invalid state name" in error.message


class TestParseModel:
    def test_two_state_file(self):
        d = parse_model(TWO_STATE)
        assert d.states == ("s0", "s1")
        assert d.initial == "s0"
        assert d.state_rewards["s0"] == 3.0
        assert len(d.transitions) == 2
        assert d.transitions[("s1", "s1")] == 1.0
        assert d.absorbing == frozenset({"s1"})

    def test_comments_and_labels(self):
        text = TWO_STATE.replace("absorbing", "absorbing labels=goal,end  # terminal")
        d = parse_model(text)
        assert d.labels["s1"] == frozenset({"goal", "end"})

    def test_row_not_stochastic(self):
        text = TWO_STATE.replace("p=1.0", "p=0.9")
        with pytest.raises(ModelError, match="row not stochastic"):
            parse_model(text)

    def test_non_strict_returns_chain(self):
        d = parse_model(TWO_STATE.replace("p=1.0", "p=0.9"), strict=False)
        assert d.transitions[("s0", "s1")] == 0.9

    def test_transition_reward_kept_as_annotation(self):
        text = TWO_STATE.replace("p=1.0", "p=1.0 reward=2.0")
        d = parse_model(text, eliminate_transition_rewards=False)
        assert d.transition_rewards == {("s0", "s1"): 2.0}

    def test_transition_reward_eliminated_by_default(self):
        text = TWO_STATE.replace("p=1.0", "p=1.0 reward=2.0")
        d = parse_model(text)
        assert d.transition_rewards == {}
        assert d.state_rewards["s0->s1"] == 2.0
        assert d.size == 3

    def test_missing_header(self):
        with pytest.raises(ModelParseError) as info:
            parse_model(TWO_STATE.replace("dtmc v1\n", ""))
        assert info.value.issues[0].line == 1
        assert "Expected header" in str(info.value)

    def test_unknown_state_reference(self):
        text = TWO_STATE.replace("trans s0 s1", "trans s0 s9")
        with pytest.raises(ModelParseError) as info:
            parse_model(text)
        issue = info.value.issues[0]
        assert issue.line == 4
        assert issue.column == 10
        assert "Unknown state reference: 's9'" in issue.message

    def test_negative_probability(self):
        text = TWO_STATE.replace("p=1.0", "p=-0.5")
        with pytest.raises(ModelParseError) as info:
            parse_model(text)
        messages = [issue.message for issue in info.value.issues]
        assert "Negative probability: -0.5" in messages

    def test_negative_reward(self):
        with pytest.raises(ModelParseError, match="Negative reward"):
            parse_model(TWO_STATE.replace("reward=3", "reward=-1"))

    def test_duplicate_transition(self):
        text = TWO_STATE.replace("initial s0", "trans s0 s1 p=1.0\ninitial s0")
        with pytest.raises(ModelParseError, match="Duplicate transition"):
            parse_model(text)

    def test_unknown_directive_collects_every_issue(self):
        text = TWO_STATE + "edge s0 s1\nstate s0 reward=1\n"
        with pytest.raises(ModelParseError) as info:
            parse_model(text)
        assert len(info.value.issues) == 2
        assert "(+1 more)" in str(info.value)

    def test_missing_initial(self):
        with pytest.raises(ModelParseError, match="Missing initial state"):
            parse_model(TWO_STATE.replace("initial s0\n", ""))
