# app/core/config.py
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8-sig",  # BOM-safe on Windows editors
        case_sensitive=False,
        extra="ignore",
    )

    # =========================
    # App
    # =========================
    APP_NAME: str = "transverse"
    LOG_LEVEL: str = "WARNING"
    SEED: int = 0
    JOBS: int = 1

    # =========================
    # Orbits
    # =========================
    # relative to the orbit scale max(1, max |c_{i,j}|)
    ORBIT_TOL: float = 1e-10
    DEDUP_FACTOR: float = 10.0
    DERIV_FLOOR: float = 1e-9
    MAX_ITER: int = 64
    NEAR_PARABOLIC_TOL: float = 1e-6
    SUPERSTABLE_TOL: float = 1e-12

    # =========================
    # Kneading / entropy
    # =========================
    ZERO_TOL: float = 1e-11
    ESCAPE_FACTOR: float = 10.0
    LAP_MAX: int = Field(default=24, le=24)
    HULL_ITERATES: int = 200
    # turning points this close (relative) to a lap end are not split on
    LAP_EDGE_TOL: float = 1e-7

    # =========================
    # Transfer operator
    # =========================
    CERT_TOL: float = 1e-8
    ID_TOL: float = 1e-8
    ABERTH_TOL: float = 1e-12
    ABERTH_MAX_SWEEPS: int = 500
    DETPOLY_OVERFLOW: float = 1e100
    MAX_DIMENSION: int = 64
    COMPLEX_STEP: float = 1e-20
    FD_STEP: float = 1e-6

    # =========================
    # Lifting
    # =========================
    N_RAYS: int = 16
    N_RADII: int = 12
    STEPS_PER_RAY: int = 4
    MAX_RADIUS_HALVINGS: int = 8
    INJ_FLOOR: float = 1e-12
    NEWTON_MAX_ITER: int = 40

    # =========================
    # Bones
    # =========================
    CURVE_TOL: float = 1e-8
    RANK_TOL: float = 1e-10
    BONE_STEP: float = 0.01
    CROSSING_TOL: float = 1e-10
    ENTROPY_TOL: float = 0.02


settings = Settings()


def orbit_tol(scale: float) -> float:
    """Closure tolerance for an orbit whose points have modulus up to `scale`."""
    return settings.ORBIT_TOL * max(1.0, float(scale))


def dedup_tol(scale: float) -> float:
    return settings.DEDUP_FACTOR * orbit_tol(scale)


def escape_bound(param: float) -> float:
    """
    Orbits leaving the disk of this radius are treated as escaping.
    `param` is c for additive families and w for multiplicative ones.
    """
    return settings.ESCAPE_FACTOR * max(1.0, abs(param))
