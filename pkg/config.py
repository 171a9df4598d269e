"""
Configuration management using Pydantic Settings
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
from typing import Optional


class Settings(BaseSettings):
    """Application settings"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")

    # Output
    output_dir: str = "runs"
    seed: int = 0

    # Logging
    log_level: str = "INFO"
    log_format: str = "text"

    # Dynamic transport (augmented Lagrangian on the staggered (s, x) grid)
    transport_slices: int = 16
    transport_penalty: float = 1.0
    transport_max_iterations: int = 20000
    transport_tolerance: float = 1e-7
    transport_check_every: int = 50
    density_floor: float = 1e-9
    oracle_max_nodes: int = 4096

    # Weighted elliptic solves
    cg_tolerance: float = 1e-12
    cg_max_iterations: int = 5000

    # Nonlinear diffusion
    diffusion_dt: Optional[float] = None
    newton_tolerance: float = 1e-12
    newton_max_iterations: int = 50
    positivity_floor: float = 1e-10

    # Check tolerances
    flat_tolerance: float = 5e-3
    sphere_tolerance: float = 5e-2
    dini_time_scale: float = 1.0
    mccann_samples: int = 512
    check_dt: float = 2.5e-4
    reparam_eps: float = 1e-3

    # Density generators
    bump_floor: float = 1e-2


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()
