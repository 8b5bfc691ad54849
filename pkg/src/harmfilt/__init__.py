"""Stochastic harmonic analysis and C-type filter placement toolkit."""

__version__ = "0.1.0"

from ._threads import set_blas_single_thread

set_blas_single_thread()  # must run before numpy initializes its BLAS pools

from .analysis import ScenarioAnalysis, analyze_scenario, standard_violations
from .ctype_filter import CTypeFilter, design, impedance, impedance_oracle
from .errors import (
    CdfParseError,
    ConvergenceError,
    HarmfiltError,
    SingularityError,
    ValidationError,
)
from .fundamental_pf import PFSolution, check_constraints, solve_power_flow
from .grid_model import (
    AggregateLoad,
    AlphaDistribution,
    Branch,
    Bus,
    NetworkCase,
    StudyCase,
    StudyConfig,
    attach_harmonic_config,
    isc_il_ratio,
    load_config,
    parse_cdf,
    serialize_cdf,
)
from .harmonic_matrix import (
    HarmonicImpedanceSet,
    InjectionBasis,
    build_harmonic_admittance,
    build_impedance_set,
    build_injection_basis,
    transfer_injection,
)
from .limits import DEFAULT_LIMITS, StandardLimits
from .modal import ModalResult, sweep_modes
from .moments import (
    AlphaMoments,
    DistortionStats,
    alpha_moments,
    distortion_stats,
    expected_vihd2,
    sihd_stats,
    sthd_stats,
    var_vihd2,
    vthd2_stats,
)
from .monte_carlo import McsRun, risk_cdf, run_mcs, sample_injections
from .placement import (
    PlacementSolution,
    base_analysis,
    build_candidates,
    fit_capacity,
    optimize_q,
    run_search,
    select_desirable,
    verify_apriori,
)
from .scenario import BASE_SCENARIO, FilterPlacement, PlacementScenario
from .dist_fit import (
    FitParams,
    PercentileEstimate,
    ef_gamma,
    ef_lognormal,
    log_likelihood,
    mlf,
    percentile95,
    vhd_p95,
)
