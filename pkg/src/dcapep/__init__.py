"""Worst-case analysis of DCA and boosted DCA through performance estimation."""

from .bounds import dca_sublinear_bound, gd_pl_rate, optimal_boost, prior_step_length
from .dca_engine import DCInstance, QuadraticDC, TrajectoryReport, gd_as_dca, run_bdca, run_dca
from .errors import (
    ClassMismatch,
    DCAPEPError,
    DegenerateError,
    DimensionMismatch,
    FactorizationError,
    InternalError,
    ParameterError,
    SolverFailure,
    SubproblemFailure,
)
from .gram_builder import SDPInstance, assign_basis, compile_pep, emit_sdp, reconstruct_certificate
from .pep_model import CurvatureClass, MethodConfig, PEPProblem, build_pep, interpolation_residual
from .sdp_backend import SolveResult, Status, solve, solve_pep

__version__ = "0.1.0"
