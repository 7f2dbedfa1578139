"""Particle-ensemble solvers for deterministic mean-field games whose costs
couple to the population's joint state/velocity law."""

from .analytic import (
    LQCoefficients,
    LQState,
    QuarticState,
    lq_solve,
    quartic_solve,
)
from .diagnostics import (
    MonotonicityReport,
    check_L_monotone,
    check_psi_monotone,
    check_V_monotone,
    second_derivative_form,
)
from .ensembles import (
    Ensemble,
    PairedEnsemble,
    TrajectoryEnsemble,
    ensemble_distance,
    mean,
    moment,
    moment_distance,
    wasserstein_1d,
)
from .families import (
    CustomVelocityFamily,
    HamiltonianFamily,
    LQFamily,
    MomentQuadraticPotential,
    QuadraticCoupledFamily,
    QuarticFamily,
    solve_velocity,
)
from .flow import gronwall_envelope, integrate_flow, separation_diagnostic
from .hjb import (
    GridConfig,
    ValueGrid,
    ValueSlice,
    gradient_at,
    regularity_report,
    solve_backward,
)
from .mfg import (
    MfgSolution,
    ProblemSpec,
    SolverConfig,
    apply_F,
    canonical_grid,
    master_consistency_residual,
    master_value,
    solve_mfg,
    uniqueness_probe,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
