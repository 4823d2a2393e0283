from __future__ import annotations

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", env_prefix="DGR_")

    seed: int = 20240501
    jobs: int = 1
    out_dir: str = "results"
    log_level: str = "INFO"

    default_config_path: str = "configs/pheno_d5.yaml"

    # Shot budgets used when a config leaves them out
    trace_shots: int = 1_000_000
    eval_shots: int = 1_000_000

    exact_oracle_limit: int = 12


settings = Settings()
