"""Reader for the line-oriented ``dtmc v1`` model format.

Grammar, one directive per line, ``#`` starts a comment::

    dtmc v1
    state <name> reward=<float> [absorbing] [labels=a,b]
    trans <from> <to> p=<float> [reward=<float>]
    initial <name>

Absorbing states get an implicit self-loop with probability 1.
"""

import logging
import re

from erlang_reward_checker.errors import ModelError, ModelParseError, ParseIssue
from erlang_reward_checker.models import Dtmc
from erlang_reward_checker.services.dtmc import normalize_transition_rewards, validate

logger = logging.getLogger(__name__)

HEADER = ("dtmc", "v1")
FLOAT_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")


def parse_float(
    value: str, line: int, column: int, field: str
) -> tuple[float | None, ParseIssue | None]:
    """Parse a decimal float; no locale, no ``nan``/``inf`` spellings."""
    if not FLOAT_RE.fullmatch(value):
        return None, ParseIssue(line, column, f"Invalid {field} value: '{value}'")
    return float(value), None


def parse_name(value: str, line: int, column: int) -> tuple[str | None, ParseIssue | None]:
    if not NAME_RE.fullmatch(value):
        return None, ParseIssue(line, column, f"Invalid state name: '{value}'")
    return value, None


def _tokens(text: str) -> list[tuple[int, str]]:
    """Split a line into (1-based column, token) pairs, dropping comments."""
    body = text.split("#", 1)[0]
    return [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", body)]


def _key_value(
    token: str, column: int, line: int, allowed: set[str]
) -> tuple[tuple[str, str] | None, ParseIssue | None]:
    key, sep, value = token.partition("=")
    if not sep or key not in allowed:
        return None, ParseIssue(line, column, f"Unexpected token: '{token}'")
    return (key, value), None


class _ModelBuilder:
    def __init__(self) -> None:
        self.states: list[str] = []
        self.rewards: dict[str, float] = {}
        self.labels: dict[str, frozenset[str]] = {}
        self.absorbing: set[str] = set()
        self.transitions: dict[tuple[str, str], float] = {}
        self.transition_rewards: dict[tuple[str, str], float] = {}
        self.initial: str | None = None
        self.references: list[tuple[str, int, int]] = []
        self.issues: list[ParseIssue] = []

    def state(self, line: int, tokens: list[tuple[int, str]]) -> None:
        if len(tokens) < 2:
            self.issues.append(ParseIssue(line, tokens[0][0], "state needs a name"))
            return
        name, error = parse_name(tokens[1][1], line, tokens[1][0])
        if error:
            self.issues.append(error)
            return
        if name in self.rewards:
            self.issues.append(
                ParseIssue(line, tokens[1][0], f"Duplicate state: '{name}'")
            )
            return

        reward = 0.0
        labels: frozenset[str] = frozenset()
        absorbing = False
        for column, token in tokens[2:]:
            if token == "absorbing":
                absorbing = True
                continue
            pair, error = _key_value(token, column, line, {"reward", "labels"})
            if error:
                self.issues.append(error)
                continue
            key, value = pair  # type: ignore[misc]
            if key == "reward":
                parsed, error = parse_float(value, line, column, "reward")
                if error:
                    self.issues.append(error)
                elif parsed < 0:  # type: ignore[operator]
                    self.issues.append(
                        ParseIssue(line, column, f"Negative reward: {value}")
                    )
                else:
                    reward = parsed  # type: ignore[assignment]
            else:
                labels = frozenset(label for label in value.split(",") if label)

        self.states.append(name)  # type: ignore[arg-type]
        self.rewards[name] = reward  # type: ignore[index]
        self.labels[name] = labels  # type: ignore[index]
        if absorbing:
            self.absorbing.add(name)  # type: ignore[arg-type]

    def transition(self, line: int, tokens: list[tuple[int, str]]) -> None:
        if len(tokens) < 4:
            self.issues.append(
                ParseIssue(line, tokens[0][0], "trans needs <from> <to> p=<float>")
            )
            return
        names = []
        for column, token in tokens[1:3]:
            name, error = parse_name(token, line, column)
            if error:
                self.issues.append(error)
                return
            names.append(name)
            self.references.append((name, line, column))  # type: ignore[arg-type]
        key = (names[0], names[1])

        probability: float | None = None
        reward: float | None = None
        for column, token in tokens[3:]:
            pair, error = _key_value(token, column, line, {"p", "reward"})
            if error:
                self.issues.append(error)
                continue
            field, value = pair  # type: ignore[misc]
            parsed, error = parse_float(value, line, column, field)
            if error:
                self.issues.append(error)
                continue
            if parsed < 0:  # type: ignore[operator]
                kind = "probability" if field == "p" else "reward"
                self.issues.append(ParseIssue(line, column, f"Negative {kind}: {value}"))
                continue
            if field == "p":
                probability = parsed
            else:
                reward = parsed

        if probability is None:
            self.issues.append(ParseIssue(line, tokens[0][0], "Missing p=<float>"))
            return
        if key in self.transitions:
            self.issues.append(
                ParseIssue(line, tokens[0][0], f"Duplicate transition: {key[0]} -> {key[1]}")
            )
            return
        self.transitions[key] = probability  # type: ignore[index]
        if reward:
            self.transition_rewards[key] = reward  # type: ignore[index]

    def initial_state(self, line: int, tokens: list[tuple[int, str]]) -> None:
        if len(tokens) != 2:
            self.issues.append(ParseIssue(line, tokens[0][0], "initial needs one name"))
            return
        if self.initial is not None:
            self.issues.append(
                ParseIssue(line, tokens[0][0], "initial state declared twice")
            )
            return
        self.initial = tokens[1][1]
        self.references.append((self.initial, line, tokens[1][0]))

    def build(self) -> Dtmc:
        declared = set(self.rewards)
        for name, line, column in self.references:
            if name not in declared:
                self.issues.append(
                    ParseIssue(line, column, f"Unknown state reference: '{name}'")
                )
        if self.initial is None:
            self.issues.append(ParseIssue(0, 0, "Missing initial state"))
        if self.issues:
            raise ModelParseError(sorted(self.issues, key=lambda i: (i.line, i.column)))

        outgoing = {source for source, _ in self.transitions}
        for state in self.states:
            if state in self.absorbing and state not in outgoing:
                self.transitions[(state, state)] = 1.0

        return Dtmc(
            states=tuple(self.states),
            initial=self.initial,  # type: ignore[arg-type]
            transitions=dict(self.transitions),
            state_rewards=dict(self.rewards),
            labels=dict(self.labels),
            absorbing=frozenset(self.absorbing),
            transition_rewards=dict(self.transition_rewards),
        )


def parse_model(
    text: str,
    strict: bool = True,
    eliminate_transition_rewards: bool = True,
) -> Dtmc:
    """
    Parse model-file content into a Dtmc.

    Args:
        text: The raw ``dtmc v1`` content.
        strict: Raise ModelError if the parsed chain violates a DTMC invariant.
        eliminate_transition_rewards: Replace transition rewards by fresh
            states right away, so callers only see state rewards.

    Returns:
        The parsed chain, states in declaration order.
    """
    builder = _ModelBuilder()
    header_seen = False

    for line_number, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokens(raw)
        if not tokens:
            continue
        if not header_seen:
            if tuple(token for _, token in tokens) != HEADER:
                raise ModelParseError(
                    [ParseIssue(line_number, tokens[0][0], "Expected header 'dtmc v1'")]
                )
            header_seen = True
            continue

        directive = tokens[0][1]
        if directive == "state":
            builder.state(line_number, tokens)
        elif directive == "trans":
            builder.transition(line_number, tokens)
        elif directive == "initial":
            builder.initial_state(line_number, tokens)
        else:
            builder.issues.append(
                ParseIssue(line_number, tokens[0][0], f"Unknown directive: '{directive}'")
            )

    if not header_seen:
        raise ModelParseError([ParseIssue(1, 1, "Expected header 'dtmc v1'")])

    dtmc = builder.build()
    if strict:
        issues = validate(dtmc)
        if issues:
            details = "; ".join(issue.message for issue in issues)
            raise ModelError(f"Invalid DTMC: {details}")
    if eliminate_transition_rewards and dtmc.transition_rewards:
        dtmc = normalize_transition_rewards(dtmc)

    logger.info(
        "Parsed model: %d states, %d transitions", dtmc.size, len(dtmc.transitions)
    )
    return dtmc
