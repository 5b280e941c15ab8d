"""Koopman operators on product spaces of lifted states and inputs.

Khatri-Rao EDMD, a stacked-observable baseline, a quadrature construction of
the projected operator and a data-based multi-step predictor.
"""

from .errors import ConfigError, DimensionError, DivergenceError, GekoError, ParameterError, ParseError, RankError
from .koopman import (
    KoopmanModel,
    analytic_koopman,
    analytic_output,
    fit_direct,
    fit_geko,
    fit_kic,
    gauss_legendre_grid,
    propagate,
)
from .lemma import LemmaData, WindowQuery, build_lemma_data, pe_check, predict_outputs
from .numerics import block_khatri_rao, hankel, khatri_rao, kron_vec, ridge_right_pinv, svd_reduce

__version__ = "0.1.0"
