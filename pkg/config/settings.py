"""
Application Settings (Environment-based)
"""
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    APP_VERSION: str = "1.0.0"

    # Worker fan-out for campaign commands (--threads overrides)
    GAMMAPHASE_THREADS: int = 1

    # Run registry root (--out overrides)
    OUTPUT_DIR: str = "runs"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/gammaphase.log"

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


settings = Settings()
