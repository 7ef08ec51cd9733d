# lpf/core/config.py

"""
Process-level configuration using Pydantic Settings
"""
import logging
import os
from functools import lru_cache
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

DEFAULT_SEED = 42


class Settings(BaseSettings):
    """Main settings, read from LPF_* environment variables and .env"""

    model_config = SettingsConfigDict(
        env_prefix="LPF_",
        env_file=os.path.join(PROJECT_ROOT, ".env"),
        extra="ignore",
    )

    # ============= APP =============
    app_name: str = "Latent Posterior Factors"
    log_level: str = "INFO"

    # ============= REPRODUCIBILITY =============
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)

    # ============= OUTPUT =============
    out_dir: str = "lpf-out"

    # ============= PARALLELISM =============
    jobs: Optional[int] = Field(default=None, ge=1)


@lru_cache()
def get_settings() -> Settings:
    """Singleton for the settings"""
    return Settings()


def configure_logging(level: str = "INFO") -> None:
    """
    Configure the root handler once; modules log through logging.getLogger(__name__)
    """
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )
