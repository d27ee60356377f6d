from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    PROJECT_NAME: str = "Perturbation Lab"
    VERSION: str = "0.1.0"

    LOG_LEVEL: str = "INFO"

    # Пустая строка = переопределение выключено
    PERTURBLAB_OUTPUT_DIR: str = ""

    DESK_HIDDEN_DIM: int = 1000
    DESK_STEPS: int = 20000

    DEFAULT_JOBS: int = 1

    class Config:
        env_file = ".env"
        case_sensitive = True

    @property
    def output_dir_override(self) -> Optional[Path]:
        if not self.PERTURBLAB_OUTPUT_DIR.strip():
            return None
        return Path(self.PERTURBLAB_OUTPUT_DIR.strip())


settings = Settings()
