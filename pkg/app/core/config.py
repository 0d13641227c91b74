from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings

PACKAGE_DIR = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
	"""Runtime settings for experiment runs."""
	# Reproducibility
	SEED: Optional[int] = None

	# Locations
	DATA_DIR: Path = PACKAGE_DIR / "data"
	OUTPUT_DIR: Path = Path("results")

	# Logging
	LOG_LEVEL: str = "INFO"

	# Optional override of the bundled success matrix
	SUCCESS_MATRIX_FILE: Optional[Path] = None

	class Config:
		env_file = ".env"
		env_prefix = "CTCAT_"

settings = Settings()
