"""MCMC sampling on implicitly defined submanifolds.

Samples densities on a level set ``{x : xi(x) = 0}`` with proposals that may
return several projection solutions; a generalized reverse-projection check
keeps the chains exactly reversible (up to momentum reversal in phase
space), whatever subset of solutions the numerical solver finds.
"""

__version__ = "0.1.0"

from . import errors
from .diagnostics import (
    ChainStats,
    Histogram1D,
    chi_square_gof,
    hybrid_rates,
    sphere_component,
    summary_rates,
    torus_angles,
    torus_parametrization,
    torus_phi_reference_density,
    uniform_angle_density,
)
from .geometry import (
    ConstraintMap,
    MassMatrix,
    PhasePoint,
    SurfacePoint,
    TangentFrame,
    apply_cotangent_projector,
    check_jacobian,
    cotangent_projector,
    project_to_surface,
    sample_cotangent_gaussian,
    surface_measure_ratio,
    tangent_frame,
)
from .polys import MonomialPoly, PolySystem
from .potentials import Potential
from .problems import Problem, builtin_problem
from .projection import (
    MalaProposalProblem,
    MalaSolution,
    ProposalSet,
    RattleProposalProblem,
    RattleSolution,
    mala_forward,
    mala_multiplier_from_target,
    mala_reverse_velocity,
    rattle_multiplier_from_positions,
    rattle_reverse_momentum,
    rattle_step,
)
from .rootfind import (
    SolverSpec,
    build_projection_polynomial,
    newton_solve,
    poly_all_roots,
    solve_projection_set,
)
from .sampler import (
    DEFAULT_FAR_RANK_TABLE,
    IterationRecord,
    OmegaPolicy,
    RngStreams,
    RunResult,
    SamplerConfig,
    Stage,
    hmc_iteration,
    hmc_momentum_update,
    mala_iteration,
    omega_of,
    run_chain,
    select_proposal,
)

__all__ = [
    "ChainStats",
    "ConstraintMap",
    "DEFAULT_FAR_RANK_TABLE",
    "Histogram1D",
    "IterationRecord",
    "MalaProposalProblem",
    "MalaSolution",
    "MassMatrix",
    "MonomialPoly",
    "OmegaPolicy",
    "PhasePoint",
    "PolySystem",
    "Potential",
    "Problem",
    "ProposalSet",
    "RattleProposalProblem",
    "RattleSolution",
    "RngStreams",
    "RunResult",
    "SamplerConfig",
    "SolverSpec",
    "Stage",
    "SurfacePoint",
    "TangentFrame",
    "apply_cotangent_projector",
    "builtin_problem",
    "build_projection_polynomial",
    "check_jacobian",
    "chi_square_gof",
    "cotangent_projector",
    "errors",
    "hmc_iteration",
    "hmc_momentum_update",
    "hybrid_rates",
    "mala_forward",
    "mala_iteration",
    "mala_multiplier_from_target",
    "mala_reverse_velocity",
    "newton_solve",
    "omega_of",
    "poly_all_roots",
    "project_to_surface",
    "rattle_multiplier_from_positions",
    "rattle_reverse_momentum",
    "rattle_step",
    "run_chain",
    "sample_cotangent_gaussian",
    "select_proposal",
    "solve_projection_set",
    "sphere_component",
    "summary_rates",
    "surface_measure_ratio",
    "tangent_frame",
    "torus_angles",
    "torus_parametrization",
    "torus_phi_reference_density",
    "uniform_angle_density",
]
