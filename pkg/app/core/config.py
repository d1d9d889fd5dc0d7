from pydantic import field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Worker count for parallel drops / trials (COOPSCHED_THREADS)
    threads: int = 1

    log_level: str = "INFO"

    # Default directory for CLI outputs when --out is not given
    output_dir: str = "out"

    # HTTP service
    port: int = 8000
    host: str = "0.0.0.0"
    cors_origins: str = "*"

    @field_validator("threads")
    @classmethod
    def clamp_threads(cls, value: int) -> int:
        return max(1, value)

    @field_validator("log_level")
    @classmethod
    def upper_level(cls, value: str) -> str:
        return value.upper()

    class Config:
        env_file = ".env"
        env_prefix = "COOPSCHED_"
        case_sensitive = False
        extra = "ignore"


settings = Settings()
