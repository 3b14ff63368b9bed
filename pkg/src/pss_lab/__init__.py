"""Laboratory for a two-class, two-server parallel queueing system.

Computes the static allocation LP structure, solves the one-dimensional
workload control problem in closed form, simulates the limiting reflected
diffusions and the prelimit queueing system under six scheduling policies,
and runs the convergence experiments tying them together.
"""

from .errors import (
    BoundaryCase,
    ConfigError,
    DegenerateMode,
    NoBracket,
    NonpositiveRate,
    NotCriticallyLoaded,
    NotProductForm,
    PolicyCaseMismatch,
    PssLabError,
    ReplayMismatch,
    TailBoundExceeded,
)
from .params import SystemParams
from .lp import (
    LpStructure,
    Mode,
    ProductForm,
    Switching,
    analyze_lp,
    canonical_relabeling,
    check_ehtc,
    check_nondegeneracy,
    classify_switching,
    compute_modes,
    factor_product_form,
    priority_classes,
    solve_lp_bruteforce,
)

from .wcp import (
    Dual,
    HjbClosedForm,
    ModeCase,
    Single,
    SymmetryReport,
    WcpCoefficients,
    WcpSolution,
    classify_mode_case,
    cost_dual,
    drift_diffusion,
    solve_wcp,
    solve_zstar,
    switching_equation,
    symmetry_check,
    v0,
    value_single,
    value_wcp,
    wcp_coefficients,
)

from .diffusion import (
    CostEstimate,
    DiffusionSpec,
    Rbm,
    ReflectedPath,
    Switched,
    discounted_cost,
    estimate_cost,
    estimate_terminal,
    occupation_near,
    simulate,
    skorokhod_map,
    terminal_samples,
)

from .distributions import (
    FAMILIES,
    DistributionSpec,
    ErlangK,
    Exponential,
    Hyperexp2Balanced,
    Lognormal,
    Pareto,
)
from .scaling import M0, ScalingPolicy, a_bar_interval, default_a_bar, zeta_bar
from .des import (
    POLICY_NAMES,
    PolicySpec,
    Primitives,
    RunConfig,
    SequenceStream,
    TrajectoryRecord,
    accelerated_rates,
    build_primitives,
    cost_estimate,
    e_max,
    run,
    select_policy,
)
from .experiments import (
    ConvergenceReport,
    LadderConfig,
    LevelResult,
    ao_experiment,
    default_distributions,
    ks_statistic,
    mode_fidelity,
    rbar_statistic,
    replay_statistics,
    ssc_statistic,
    verify_replay,
    worker_count,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCase",
    "ConfigError",
    "DegenerateMode",
    "LpStructure",
    "Mode",
    "NoBracket",
    "NonpositiveRate",
    "NotCriticallyLoaded",
    "NotProductForm",
    "PolicyCaseMismatch",
    "ProductForm",
    "PssLabError",
    "Switching",
    "SystemParams",
    "TailBoundExceeded",
    "analyze_lp",
    "canonical_relabeling",
    "check_ehtc",
    "check_nondegeneracy",
    "classify_switching",
    "compute_modes",
    "factor_product_form",
    "priority_classes",
    "solve_lp_bruteforce",
    "Dual",
    "HjbClosedForm",
    "ModeCase",
    "Single",
    "SymmetryReport",
    "WcpCoefficients",
    "WcpSolution",
    "classify_mode_case",
    "cost_dual",
    "drift_diffusion",
    "solve_wcp",
    "solve_zstar",
    "switching_equation",
    "symmetry_check",
    "v0",
    "value_single",
    "value_wcp",
    "wcp_coefficients",
    "CostEstimate",
    "DiffusionSpec",
    "Rbm",
    "ReflectedPath",
    "Switched",
    "discounted_cost",
    "estimate_cost",
    "estimate_terminal",
    "occupation_near",
    "simulate",
    "skorokhod_map",
    "FAMILIES",
    "DistributionSpec",
    "ErlangK",
    "Exponential",
    "Hyperexp2Balanced",
    "Lognormal",
    "Pareto",
    "M0",
    "ScalingPolicy",
    "a_bar_interval",
    "default_a_bar",
    "zeta_bar",
    "POLICY_NAMES",
    "PolicySpec",
    "Primitives",
    "RunConfig",
    "SequenceStream",
    "TrajectoryRecord",
    "accelerated_rates",
    "build_primitives",
    "cost_estimate",
    "e_max",
    "run",
    "select_policy",
    "ConvergenceReport",
    "LadderConfig",
    "LevelResult",
    "ReplayMismatch",
    "ao_experiment",
    "default_distributions",
    "ks_statistic",
    "mode_fidelity",
    "rbar_statistic",
    "replay_statistics",
    "ssc_statistic",
    "terminal_samples",
    "verify_replay",
    "worker_count",
    "__version__",
]
