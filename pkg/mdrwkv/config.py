"""App configuration."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    log_level: str = "INFO"
    runs_dir: str = "./runs"
    default_seed: int = 17
    bench_repeats: int = 5
    preview_png: bool = False
    num_threads_hint: int = 0  # informational only, logged at startup

    model_config = SettingsConfigDict(env_prefix="MDRWKV_", env_file=".env", extra="ignore")


settings = Settings()
