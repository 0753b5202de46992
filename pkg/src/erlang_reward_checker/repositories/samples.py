"""Single-column sample CSVs and CDF-grid CSVs."""

import csv
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from erlang_reward_checker.models import EmpiricalDistribution

SAMPLE_COLUMN = "reward"


def write_samples(path: str | Path, e: EmpiricalDistribution) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([SAMPLE_COLUMN])
        writer.writerows([repr(float(x))] for x in e.samples)


def read_samples(path: str | Path, seed: int = 0) -> EmpiricalDistribution:
    """Read a sample CSV; the header row is optional."""
    values: list[float] = []
    with Path(path).open(newline="", encoding="utf-8") as handle:
        for row_number, row in enumerate(csv.reader(handle), start=1):
            if not row or not row[0].strip():
                continue
            cell = row[0].strip()
            if row_number == 1 and cell == SAMPLE_COLUMN:
                continue
            try:
                values.append(float(cell))
            except ValueError as e:
                raise ValueError(f"Invalid sample at row {row_number}: '{cell}'") from e
    samples = np.sort(np.asarray(values, dtype=float))
    return EmpiricalDistribution(samples=samples, run_count=samples.size, seed=seed)


def write_cdf_grid(
    path: str | Path, points: Iterable[tuple[float, float]], header: tuple[str, str] = ("x", "cdf")
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows([repr(float(x)), repr(float(y))] for x, y in points)
