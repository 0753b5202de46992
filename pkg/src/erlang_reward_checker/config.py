from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    env: str = "development"
    log_level: str = "INFO"

    default_seed: int = 0
    threads: int = 1

    dense_solver_limit: int = 2000
    iterative_tolerance: float = 1e-12
    moment_scaling: Literal["per-order", "paper-literal", "raw"] = "per-order"

    fit_restarts: int = 5
    fit_moment_tolerance: float = 1e-5
    marginal_margin: float = 0.02

    sim_max_steps: int = 1_000_000
    sim_block_size: int = 16_384

    model_config = SettingsConfigDict(
        env_prefix="ERC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )


settings = Settings()
