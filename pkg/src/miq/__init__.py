"""Mutual information of QAM over AWGN and its multi-exponential surrogate."""

__version__ = "0.1.0"

from .constellation import Constellation, build_pam, build_qam
from .ergodic import (
    ErgodicResult,
    FadingModel,
    ergodic_mi_closed,
    ergodic_mi_numeric,
    exact_source,
    laplace_of_pdf,
    surrogate_source,
)
from .errors import (
    ConfigError,
    DomainError,
    InvalidOrderError,
    MiqError,
    NonConvergenceError,
    NotFoundError,
    NumericalError,
    ParseError,
)
from .exact_mi import (
    MiCurve,
    QuadratureSpec,
    SnrGrid,
    db_to_linear,
    linear_to_db,
    mi_curve,
    mi_curve_monte_carlo,
    mi_monte_carlo,
    mi_quadrature,
)
from .fitter import FitConfig, FitResult, fit_edcf, jacobian_edcf, levenberg_marquardt, lm_step, residuals_edcf
from .medcf import CoefficientTable, EdcfModel, best_model, builtin_table, canonical_grid, eval_edcf, load_table, rmse

__all__ = [name for name in dir() if not name.startswith("_")]
