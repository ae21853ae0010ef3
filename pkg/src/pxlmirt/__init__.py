"""Sparse Bayesian multidimensional IRT via PXL-EM with exact SUN E-steps."""
__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, ParameterError, PxlError
from .model import (BINARY, CONTINUOUS, FitResult, ItemKind, ModelParams, PriorConfig,
                    ResponseMatrix, effective_dimension, laplace_density, ordinal, validate)
from .tmvn import TruncationSpec, estimate_orthant_prob, sample_tmvn, solve_tilting
from .sun import (SunParams, binary_sun_params, cdf_difference, mixed_sun_params, sample_sun,
                  score_factors)
from .em import LadderConfig, dynamic_posterior_exploration, e_step, m_step, run_pxl_em
from .gibbs import run_gibbs, sample_pg
from .metrics import align_loadings, fdr_fnr, intercept_mse, loading_mse, reconstruction_mse
