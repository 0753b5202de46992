"""Mixture JSON documents, validated with pydantic."""

from pathlib import Path

from pydantic import BaseModel, Field

from erlang_reward_checker.models import ErlangMixture

MIXTURE_FORMAT = "erlang-mixture/v1"


class MixtureRecord(BaseModel):
    format: str = Field(default=MIXTURE_FORMAT, pattern=r"^erlang-mixture/v1$")
    weights: list[float]
    shapes: list[int]
    rate: float = Field(gt=0)
    location: float = Field(default=0.0, ge=0)

    @classmethod
    def from_mixture(cls, m: ErlangMixture) -> "MixtureRecord":
        return cls(**m.to_record())

    def to_mixture(self) -> ErlangMixture:
        return ErlangMixture(
            weights=tuple(self.weights),
            shapes=tuple(self.shapes),
            rate=self.rate,
            location=self.location,
        )


def save_mixture(path: str | Path, m: ErlangMixture) -> None:
    record = MixtureRecord.from_mixture(m)
    Path(path).write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")


def load_mixture(path: str | Path) -> ErlangMixture:
    record = MixtureRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))
    return record.to_mixture()
