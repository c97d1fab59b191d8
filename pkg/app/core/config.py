from pydantic_settings import BaseSettings
from functools import lru_cache
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent.parent

class Settings(BaseSettings):
    PROJECT_NAME: str = "Grid Attack Workbench"
    VERSION: str = "1.0.0"
    API_V1_STR: str = "/api/v1"
    LOG_LEVEL: str = "INFO"

    # Data locations
    CASES_DIR: str = str(BASE_DIR / "cases")
    SCENARIOS_DIR: str = str(BASE_DIR / "scenarios")
    OUTPUT_DIR: str = str(BASE_DIR / "output")

    # Experiment protocol
    SNR_DB: float = 46.0
    FALSE_ALARM: float = 0.04
    TRAIN_SAMPLES: int = 1000
    ANGLE_STD: float = 0.01  # rad
    MAGNITUDE_STD: float = 0.005  # p.u.

    # Linear algebra tolerances
    RANK_TOL: float = 1e-8  # relative to the largest singular value
    LEVERAGE_TOL: float = 1e-8  # relative to trace(W) / m
    SUPPORT_TOL: float = 1e-12

    # Gauss-Newton
    GN_MAX_ITER: int = 50
    GN_STEP_TOL: float = 1e-8
    GN_GRAD_TOL: float = 1e-6

    # Attack construction
    EPS1_RELATIVE: float = 1e-3
    EPS1_RELATIVE_DATA: float = 5e-2
    EPS2: float = 1e-6
    NULL_GAP_FACTOR: float = 10.0
    UNOBSERVABLE_TOL: float = 0.2

    # Graph searches
    MAX_CUT_COMPONENTS: int = 16

    # Harness
    MAX_WORKERS: int = 1

    class Config:
        env_file = ".env"
        case_sensitive = True

@lru_cache()
def get_settings() -> Settings:
    return Settings()

settings = get_settings()
