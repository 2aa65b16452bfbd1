import os
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Interpreter settings configuration"""

    # Scheduler Configuration
    servers: int = os.cpu_count() or 1
    sequential: bool = False
    seed: int = 0
    deadlock_grace_ms: int = 200

    # Synchronization Configuration
    debug_sync: bool = False
    lock_timeout_ms: Optional[int] = None

    # Reporting Configuration
    stats: bool = False
    debug_checks: bool = False

    # Source Locations
    lib_dir: str = os.path.join(os.path.dirname(os.path.abspath(__file__)), "lib")
    programs_dir: str = os.path.join(os.path.dirname(os.path.abspath(__file__)), "programs")

    # Logging Configuration
    log_dir: str = "logs"
    log_file: str = "psl.log"
    log_level: str = "INFO"
    console_log_level: str = "WARNING"

    # Interpreter Limits
    max_call_depth: int = 400

    model_config = SettingsConfigDict(env_file=".env", env_prefix="PSL_", case_sensitive=False, extra="ignore")


# Global settings instance
settings = Settings()
