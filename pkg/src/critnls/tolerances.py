"""Single source of truth for numerical tolerances.

Every acceptance threshold and every solver default reads from
:data:`TOL`; changing a value here changes it everywhere.
"""
from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # landscape algebra
    landscape_identity: float = 1e-10
    rho_argmax_rel: float = 1e-8
    max_g_scan_rel: float = 1e-8
    rho_scan_rel: float = 1e-6
    c0_bisection_rel: float = 1e-8

    # sharp constants
    sobolev_quadrature_rel: float = 1e-6
    sobolev_dilation_rel: float = 1e-12
    gn_equality_rel: float = 1e-4
    shooting_residual: float = 1e-8
    shooting_q0_stability: float = 1e-6
    inequality_slack: float = 1e-6
    tail_mass: float = 1e-10

    # field functionals
    gaussian_mass_rel: float = 1e-8
    dilation_mass_rel: float = 1e-8
    dilation_grad_rel: float = 1e-6
    fiber_fd_rel: float = 1e-6
    theta_root_rel: float = 1e-9
    orbit_identity: float = 1e-10
    orbit_symmetry: float = 1e-8
    directional_derivative_rel: float = 1e-5

    # ground state
    solver_residual: float = 1e-9
    euler_lagrange_rel: float = 1e-5
    pohozaev_rel: float = 1e-6

    # dynamics
    free_gaussian_rel: float = 1e-8
    mass_drift_rel: float = 1e-10
    energy_drift_rel: float = 1e-6
    strang_order: float = 2.0
    strang_order_slack: float = 0.2
    strichartz_homogeneity: float = 1e-12
    strichartz_refinement_rel: float = 1e-4
    picard_contraction: float = 0.5

    # stability experiment
    cap_drift_rel: float = 1e-4
    control_distance: float = 1e-6
    trend_slack: float = 0.2


TOL = Tolerances()
