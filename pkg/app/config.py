from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", env_prefix="COARSEGRAIN_",
                                      extra="ignore")

    jobs: int = 1
    out_dir: str = "results"
    log_level: str = "INFO"


@lru_cache
def get_settings():
    return Settings()
