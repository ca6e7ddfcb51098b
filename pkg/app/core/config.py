"""
Application configuration settings.
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Load .env before the settings class reads the environment
load_dotenv()


class Settings:
    """Application settings."""

    # Application
    APP_NAME: str = "KDiff"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"

    # Directories
    BASE_DIR: Path = Path(__file__).parent.parent.parent
    DATA_DIR: Path = BASE_DIR / "data"
    OUTPUT_DIR: Path = Path(os.getenv("KDIFF_OUTPUT_DIR", str(BASE_DIR / "output")))
    TEMPLATES_DIR: Path = BASE_DIR / "app" / "templates"

    # Workers
    KDIFF_THREADS: int = int(os.getenv("KDIFF_THREADS", str(os.cpu_count() or 4)))
    KDIFF_SEED: int = int(os.getenv("KDIFF_SEED", "20240601"))

    # Differential tolerances
    RESIDUE_ARG_TOL: float = float(os.getenv("KDIFF_RESIDUE_ARG_TOL", "1e-9"))
    POSITION_TOL: float = float(os.getenv("KDIFF_POSITION_TOL", "1e-12"))
    SERIES_TERMS: int = int(os.getenv("KDIFF_SERIES_TERMS", "24"))

    # Flat model
    GLUING_LENGTH_TOL: float = float(os.getenv("KDIFF_GLUING_LENGTH_TOL", "1e-9"))
    CONE_ANGLE_TOL: float = float(os.getenv("KDIFF_CONE_ANGLE_TOL", "1e-6"))
    RING_RADIUS_FACTOR: float = float(os.getenv("KDIFF_RING_RADIUS_FACTOR", "0.25"))
    RING_MIN_POINTS: int = int(os.getenv("KDIFF_RING_MIN_POINTS", "6"))
    LOOP_POINTS: int = int(os.getenv("KDIFF_LOOP_POINTS", "48"))
    CLOSURE_RESIDUAL_TOL: float = float(os.getenv("KDIFF_CLOSURE_RESIDUAL_TOL", "1e-7"))
    PERIOD_DENOMINATOR_BOUND: int = int(os.getenv("KDIFF_PERIOD_DENOMINATOR_BOUND", "1000000"))
    PERIOD_TOL: float = float(os.getenv("KDIFF_PERIOD_TOL", "1e-10"))

    # Trajectories
    SNAP_TOL: float = float(os.getenv("KDIFF_SNAP_TOL", "1e-8"))
    CLOSURE_TOL: float = float(os.getenv("KDIFF_CLOSURE_TOL", "1e-9"))
    BUDGET_FACTOR: float = float(os.getenv("KDIFF_BUDGET_FACTOR", "1000"))
    DENSE_GRID: int = int(os.getenv("KDIFF_DENSE_GRID", "64"))
    DENSE_VISITS: int = int(os.getenv("KDIFF_DENSE_VISITS", "3"))
    MAX_SEGMENTS: int = int(os.getenv("KDIFF_MAX_SEGMENTS", "400000"))
    DIRECTION_TOL: float = float(os.getenv("KDIFF_DIRECTION_TOL", "1e-9"))

    # Quasi-Strebel structures
    GRADIENT_ANGLE_TOL: float = float(os.getenv("KDIFF_GRADIENT_ANGLE_TOL", "1e-6"))
    CONTAINMENT_TOL: float = float(os.getenv("KDIFF_CONTAINMENT_TOL", "1e-8"))
    GEOMETRY_GRID: float = float(os.getenv("KDIFF_GEOMETRY_GRID", "1e-12"))
    MAX_TILING_VERTICES: int = int(os.getenv("KDIFF_MAX_TILING_VERTICES", "160"))
    LEVELS_PER_PACK: int = int(os.getenv("KDIFF_LEVELS_PER_PACK", "32"))
    POINTS_PER_CURVE: int = int(os.getenv("KDIFF_POINTS_PER_CURVE", "256"))
    MAX_LEVEL_STEPS: int = int(os.getenv("KDIFF_MAX_LEVEL_STEPS", "20000"))

    # Heine-Stieltjes
    NEWTON_RESTARTS: int = int(os.getenv("KDIFF_NEWTON_RESTARTS", "200"))
    NEWTON_MAX_ITER: int = int(os.getenv("KDIFF_NEWTON_MAX_ITER", "200"))
    NEWTON_TOL: float = float(os.getenv("KDIFF_NEWTON_TOL", "1e-12"))
    DEDUPE_DISTANCE: float = float(os.getenv("KDIFF_DEDUPE_DISTANCE", "1e-6"))
    ROOT_DEGREE_CAP: int = int(os.getenv("KDIFF_ROOT_DEGREE_CAP", "512"))
    HULL_INFLATION: float = float(os.getenv("KDIFF_HULL_INFLATION", "1e-8"))
    POTENTIAL_RESOLUTION: int = int(os.getenv("KDIFF_POTENTIAL_RESOLUTION", "64"))
    LEVY_MASS_TOL: float = float(os.getenv("KDIFF_LEVY_MASS_TOL", "0.02"))
    LEVY_BOUNDARY_TOL: float = float(os.getenv("KDIFF_LEVY_BOUNDARY_TOL", "0.02"))

    # Rendering
    SVG_WIDTH: int = int(os.getenv("KDIFF_SVG_WIDTH", "640"))
    SVG_HEIGHT: int = int(os.getenv("KDIFF_SVG_HEIGHT", "640"))

    class Config:
        env_file = ".env"
        case_sensitive = True


# Global settings instance
settings = Settings()

# Create necessary directories
try:
    settings.OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
except (PermissionError, OSError):
    pass
