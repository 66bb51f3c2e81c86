import logging
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    """Process-wide knobs read from HESSOLVE_* environment variables (or a .env file)."""

    model_config = SettingsConfigDict(env_prefix="HESSOLVE_", extra="ignore")

    # Cap on worker threads for sweeps
    threads: int = Field(default=1, ge=1)
    log_level: str = "INFO"
    log_format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def configure_logging(level: str = None) -> None:
    settings = get_settings()
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format=settings.log_format,
    )
