"""Penalised regression with general differential-operator penalties."""
from .diffop import (
    ExpPolyFunction,
    LinearOperator,
    NullSpaceBasis,
    apply_operator,
    basis_for,
    characteristic_roots,
    exp_poly,
    null_basis_constant,
    operator_from_basis,
    preset,
    wronskian,
)
from .errors import *  # noqa: F401,F403
from .functionals import Functional, KMatrix, assemble_k, integral, null_design, point_eval
from .gp import GPModel, posterior_mean, verify_bayes_equivalence
from .greens import GreensFunction, PenaltyKernel, make_kernel, verify_greens_identity
from .solver import (
    BandedQ,
    FitProblem,
    FitResult,
    build_banded_q,
    fit,
    select_lambda,
    solve_banded,
    solve_dense,
    solve_logistic,
)

__version__ = "0.1.0"
