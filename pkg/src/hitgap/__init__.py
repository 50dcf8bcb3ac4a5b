"""Numerics for hitting times and spectral gaps of one-dimensional diffusions.

Three independent routes to the same quantities, cross-checked numerically:
the Kac moment recursion (module ``kac``), spectral discretization of the
generator d/dm d/dS (module ``spectral``), and Monte Carlo simulation
(module ``montecarlo``); module ``constants`` holds the characteristic
suprema B and the sandwich report tying the routes together.
"""

from .constants import (
    ConstantsReport,
    ExitBounds,
    LambdaBounds,
    assemble_report,
    brute_force_B,
    compute_B,
    default_anchors,
    exit_lower_constant,
    exit_upper_constant,
    lambda_bounds,
    vanishing_lambda_scan,
)
from .kac import (
    CoefficientTable,
    GreenKernel,
    LambdaEstimate,
    MomentTable,
    coefficient_table,
    estimate_lambda,
    exit_moments,
    green_bounded,
    green_halfline,
    hitting_moments,
    jk_apply,
)
from .model import (
    DiffusionSpec,
    RecurrenceCertificate,
    ScaleFunction,
    SpeedMeasure,
    Tolerances,
    build_scale,
    build_speed,
    certify_recurrence,
)
from .montecarlo import (
    HittingSampleSet,
    SimConfig,
    empirical_exp_moment,
    simulate_hitting,
    tail_rate,
)
from .pipeline import AnalysisResult, analyze
from .spectral import (
    DiscreteOperator,
    NaturalGrid,
    SpectrumResult,
    build_grid,
    build_operator,
    full_line_gap,
    killed_gap,
    smallest_eigenvalues,
    variational_check,
)

__version__ = "0.1.0"
