"""Model files on disk and the models bundled with the package."""

import hashlib
import logging
from importlib import resources
from pathlib import Path

from erlang_reward_checker.models import Dtmc
from erlang_reward_checker.services.model_parser import parse_model

logger = logging.getLogger(__name__)

BUNDLED_PREFIX = "bundled:"
BUNDLED_SUFFIX = ".dtmc"


def _bundled_dir():
    return resources.files("erlang_reward_checker") / "bundled"


def bundled_model_names() -> list[str]:
    return sorted(
        entry.name.removesuffix(BUNDLED_SUFFIX)
        for entry in _bundled_dir().iterdir()
        if entry.name.endswith(BUNDLED_SUFFIX)
    )


def read_model_text(source: str) -> str:
    """Read ``source``, a file path or ``bundled:<name>``."""
    if source.startswith(BUNDLED_PREFIX):
        name = source.removeprefix(BUNDLED_PREFIX)
        entry = _bundled_dir() / f"{name}{BUNDLED_SUFFIX}"
        if not entry.is_file():
            raise FileNotFoundError(
                f"No bundled model '{name}'; available: {', '.join(bundled_model_names())}"
            )
        return entry.read_text(encoding="utf-8")
    return Path(source).read_text(encoding="utf-8")


def model_digest(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_model(
    source: str, strict: bool = True, eliminate_transition_rewards: bool = True
) -> tuple[Dtmc, str]:
    """Parse a model file; returns the chain and the digest of its text."""
    text = read_model_text(source)
    dtmc = parse_model(
        text, strict=strict, eliminate_transition_rewards=eliminate_transition_rewards
    )
    logger.info("Loaded model %s", source)
    return dtmc, model_digest(text)


def load_bundled_model(name: str, **kwargs) -> Dtmc:
    return load_model(f"{BUNDLED_PREFIX}{name}", **kwargs)[0]
