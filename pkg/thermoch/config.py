"""
ThermoCH - Process configuration.

Centralized configuration using Pydantic Settings for environment variable management.
Scientific run parameters do not live here; they come from the run config
file (see thermoch.schemas.RunConfig).

Environment Variables:
    All settings can be overridden via environment variables with THERMOCH_ prefix.

    Logging Settings:
        THERMOCH_LOG_LEVEL=DEBUG          - Root log level (DEBUG logs every Newton iteration)
        THERMOCH_LOG_FORMAT=...           - logging format string

    Output Settings:
        THERMOCH_DEFAULT_OUT_DIR=./runs   - Output directory when neither --out nor output.directory is set
        THERMOCH_MAX_DENSE_UNKNOWNS=8192  - Warn above this size for the dense-direct solver
"""
from pydantic_settings import BaseSettings


class LoggingSettings(BaseSettings):
    """Logging configuration settings."""
    log_level: str = "INFO"
    log_format: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    class Config:
        env_prefix = "THERMOCH_"
        env_file = ".env"
        extra = "ignore"


class OutputSettings(BaseSettings):
    """
    Output and resource guard settings.

    The dense-direct linear solver builds an N x N matrix per Newton
    iteration; it is meant for small oracle-sized problems only.
    """
    default_out_dir: str = "./runs"
    max_dense_unknowns: int = 8192

    class Config:
        env_prefix = "THERMOCH_"
        env_file = ".env"
        extra = "ignore"


class Settings(BaseSettings):
    """Combined application settings."""
    logging: LoggingSettings = LoggingSettings()
    output: OutputSettings = OutputSettings()

    class Config:
        env_prefix = "THERMOCH_"
        env_file = ".env"
        extra = "ignore"


# Global settings instance
settings = Settings()
