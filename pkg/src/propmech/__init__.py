"""Proportional-share auction mechanisms for auto-bidding agents.

Library layers:

* :mod:`propmech.model` - agents, valuations, allocation, liquid welfare;
* :mod:`propmech.payments` - pay-your-bid, integral, power, and thresholded
  payment schemes;
* :mod:`propmech.solver` - exact best responses and KKT diagnostics;
* :mod:`propmech.dynamics` - best-response dynamics and equilibrium checks;
* :mod:`propmech.welfare` - optimal liquid welfare, dual certificates, and
  price-of-anarchy reports;
* :mod:`propmech.conversion` - the randomised indivisible-item variant;
* :mod:`propmech.experiments` / :mod:`propmech.cli` - batch harness.
"""

from .conversion import ConversionReport, RandomizedOutcome, expectation_check, sample_outcome
from .dynamics import (
    ConvexityProbeReport,
    DeviationReport,
    EquilibriumResult,
    best_response_dynamics,
    convexity_probe,
    verify_epsilon_nash,
)
from .errors import (
    AssumptionViolationError,
    DegenerateColumnError,
    DomainError,
    EnumerationBudgetError,
    InfeasibleProgramError,
    InternalInvariantError,
    PreconditionError,
    PropmechError,
    QuadratureError,
    UnsupportedConstructionError,
    UsageError,
)
from .experiments import (
    ExperimentConfig,
    GeneratorSpec,
    ResultsRow,
    generate_instance,
    lower_bound_search,
    poa_sweep_n,
    run_experiment,
)
from .model import (
    AgentSpec,
    Allocation,
    ConstraintReport,
    Instance,
    ValuationSpec,
    allocate_proportional,
    check_constraints,
    eval_gradient,
    eval_valuation,
    instance_from_json,
    instance_to_json,
    liquid_welfare,
)
from .payments import (
    MechanismSpec,
    allocation_for_modified,
    payment_general_quadrature,
    payment_modified,
    payment_power_closed_form,
    payment_standard,
    power_shape_functions,
    price_identity_residual,
    transform_bids_modified,
)
from .solver import (
    BestResponseResult,
    KktReport,
    SolverParams,
    agent_objective,
    best_response,
    best_response_grid_oracle,
    kkt_residual,
)
from .welfare import (
    AssignmentGrid,
    DualCertificate,
    FeasibilityReport,
    PoaReport,
    build_dual_power,
    build_dual_standard,
    check_dual_feasibility,
    check_dual_feasibility_joint,
    optimal_lw_concave,
    optimal_lw_grid,
    poa_report,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
