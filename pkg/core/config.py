from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Centralized engineering constants.
    Pydantic reads PSLAB_* environment variables or a .env file.
    """
    # Geometry
    boundary_eps: float = 1e-12
    max_depth: float = 700.0

    # Orbits and horoballs
    dedup_resolution: float = 1e-9
    orbit_cap: int = 500_000
    orbit_slack: float = 1.0
    max_shrink_halvings: int = 40

    # Tolerances for additive-constant estimates
    gromov_tolerance: float = 1.0
    excursion_tolerance: float = 4.0
    gmf_band: float = 5.0

    # Measures
    patterson_s_offset: float = 0.05
    min_atom_mass: float = 1e-6

    # Density verdicts
    drift_margin: float = 2.0
    exceedance_level: float = 6.0
    condensation_windows: int = 6
    condensation_slope: float = -0.35
    khinchin_stable_fraction: float = 0.9

    # Series classification
    rational_tolerance: float = 1e-12
    threshold_tolerance: float = 1e-9

    # Runs
    default_seed: int = 0
    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="PSLAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()
