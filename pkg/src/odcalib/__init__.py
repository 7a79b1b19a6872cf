"""
odcalib: entropy-model origin-destination matrices and cost-function calibration.

Estimate a trip correspondence matrix from zone marginals and a travel-cost
matrix with Sinkhorn or accelerated Sinkhorn, and fit parametric cost
functions to observed survey data by minimizing a squared residual.
"""

from .calibrate import (
    AnnealingSchedule,
    CalibrationResult,
    Evaluation,
    calibrate,
    evaluate_point,
    grid_search,
    lattice_descent,
    metropolis_accept,
    multistart,
    piyavskii_minimize,
    residual,
    simulated_annealing,
)
from .core import (
    CorrespondenceMatrix,
    CostMatrix,
    DualPotentials,
    Marginals,
    ODError,
    SolveReport,
    SolverConfig,
    SolverError,
    ValidationError,
    make_marginals,
    to_counts,
)
from .costs import FAMILIES, CostFamily, GridSpec, ParamRange, evaluate_family, family_grid
from .data import (
    ObservationTable,
    Problem,
    SurveyFormatError,
    SurveyValueError,
    build_problem,
    generate_synthetic,
    load_survey_csv,
    synthetic_instance,
    write_survey_csv,
)
from .dual import LogKernel, dual_gradient, dual_objective, primal_from_duals, primal_objective
from .solvers import (
    accelerated_solve,
    round_to_marginals,
    sinkhorn_block_update_l,
    sinkhorn_block_update_w,
    sinkhorn_solve,
    solve,
    stopping_check,
)

__version__ = "0.1.0"
