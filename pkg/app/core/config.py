# app/core/config.py - Solver, verifier and run settings

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Geodesics
    rk4_steps_per_unit: int = 64
    min_rk4_steps: int = 4
    fd_step: float = 1e-4  # metric derivatives (Christoffel, curvature)

    # Log map (shooting)
    log_max_iter: int = 50
    log_tolerance: float = 1e-9

    # Foot points
    foot_point_seeds: int = 3
    foot_point_tolerance: float = 1e-12
    foot_point_max_iter: int = 50

    # Weinstein average
    averaging_step: float = 0.9
    averaging_tolerance: float = 1e-11
    averaging_max_iter: int = 200
    reference_index: int = 0
    sup_refinement: bool = True

    # Moser construction
    quadrature_nodes: int = 16
    flow_steps: int = 32
    pushforward_step: float = 1e-5
    chart_jacobian_step: float = 1e-6  # exp differential
    homotopy_step: float = 1e-4  # chart differences inside the homotopy operator
    exactness_step: float = 1e-3
    lift_tolerance: float = 1e-12
    lift_max_iter: int = 30
    lift_seeds: int = 2
    inverse_tolerance: float = 1e-11
    inverse_max_iter: int = 20
    allow_containment_override: bool = False
    max_step_halvings: int = 8

    # Gentle check
    gentle_scan_radius: float = 2.5
    gentle_samples_per_unit: int = 64
    curvature_tolerance: float = 1e-4

    # Verifier
    verifier_seed: int = 20240611
    noise_floor: float = 1e-7
    noise_floor_factor: float = 3.0

    # Runtime
    threads: int = 1
    log_level: str = "INFO"
    output_dir: str = "runs"

    class Config:
        env_file = ".env"
        env_prefix = "SUBAVG_"
        extra = "ignore"


settings = Settings()
