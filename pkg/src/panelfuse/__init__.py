"""Treatment-effect estimation from two-domain panel data with no
pre-intervention period: equi-confounding estimators, budgeted
synthetic-control data fusion, bias-bound calculators, and a simulation
harness."""

from .equi import (
    EquiEstimate,
    LogEquiBoundInputs,
    PositivityError,
    SynthBoundInputs,
    bias_bound_log_equi,
    bias_bound_log_equi_refined,
    bias_bound_synth,
    estimate_linear_equi,
    estimate_log_equi,
)
from .fusion import (
    BudgetVector,
    FusionConfig,
    FusionError,
    FusionResult,
    budget_grid,
    run_fusion,
    run_naive,
    run_sensitivity,
)
from .panel import (
    PanelDataset,
    PanelValidationError,
    UnitAggregates,
    ValidationReport,
    aggregate,
    normalize_covariates,
    validate,
    with_pseudo_target,
)
from .simlab import (
    DgpConfig,
    PlaceboResult,
    SimulatedPanel,
    check_equi_assumptions,
    generate_dgp,
    generate_example31,
    generate_scaled,
    latent_match_nse,
    run_bias_experiment,
    run_placebo,
    summarize_bias,
)
from .solver import (
    QcqpProblem,
    SolverConfig,
    SolverError,
    SolverInfeasible,
    SolverNonConvergence,
    WeightVector,
    nse,
    project_simplex,
    solve_budgeted_qcqp,
    solve_simplex_ls,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
