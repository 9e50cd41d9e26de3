"""FVC-slope prognosis pipeline.

Predicts the weekly rate of forced-vital-capacity decline from one CT slice
plus shallow features (estimated lung volume, demographics), trained against
SVD-fitted slope pseudo-labels and scored with the modified Laplace
log-likelihood under patient-disjoint cross-validation.
"""

from .ctprep import (CtVolume, estimate_volume, normalize_intensity,
                     resize_bilinear, select_slice, watershed_lung_mask)
from .features import Demographics, NormStats, Sex, Smoking, encode, fit_norm_stats
from .metrics import (LLL_M_MAX, Prediction, ScorePair, lll_m_aggregate,
                      lll_m_single, rmse)
from .model import FibroModel, ModelConfig, reconstruct_fvc
from .optim import AdamW, AdamWState, adamw_step
from .slope import FvcSeries, SlopeLabel, build_design_matrix, fit_slope, svd_2col
from .tensor import GradTape, Tensor, backward
from .train import TrainConfig, run_cv

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AdamWState",
    "CtVolume",
    "Demographics",
    "FibroModel",
    "FvcSeries",
    "GradTape",
    "LLL_M_MAX",
    "ModelConfig",
    "NormStats",
    "Prediction",
    "ScorePair",
    "Sex",
    "SlopeLabel",
    "Smoking",
    "Tensor",
    "TrainConfig",
    "adamw_step",
    "backward",
    "build_design_matrix",
    "encode",
    "estimate_volume",
    "fit_norm_stats",
    "fit_slope",
    "lll_m_aggregate",
    "lll_m_single",
    "normalize_intensity",
    "reconstruct_fvc",
    "resize_bilinear",
    "rmse",
    "run_cv",
    "select_slice",
    "svd_2col",
    "watershed_lung_mask",
]
