import os
from dotenv import load_dotenv

load_dotenv()


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


class Settings:
    """Application settings"""
    # App settings
    APP_NAME: str = os.getenv("APP_NAME", "Volterra Insider Control")
    APP_VERSION: str = os.getenv("APP_VERSION", "1.0.0")
    DEBUG: bool = _flag("DEBUG", "false")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # Run settings
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
    DEFAULT_SEED: int = int(os.getenv("DEFAULT_SEED", "20240611"))
    THREADS: int = int(os.getenv("THREADS", "1"))
    EXPORT_SCENARIOS: int = int(os.getenv("EXPORT_SCENARIOS", "5"))

    # Numerical defaults
    DENSITY_FLOOR: float = float(os.getenv("DENSITY_FLOOR", "1e-12"))
    QUADRATURE_NODES: int = int(os.getenv("QUADRATURE_NODES", "2048"))
    IMAGINARY_RESIDUE_TOL: float = float(os.getenv("IMAGINARY_RESIDUE_TOL", "1e-8"))

settings = Settings()
