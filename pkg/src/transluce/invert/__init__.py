"""Losses, reporting and analysis-by-synthesis fitting."""

from .fit import (DIRECT_CONFIG, SSS_CONFIG, DirectObservation, SssObjective, SssObservation,
                  fit_direct, fit_sss, sss_physical, sss_vector)
from .losses import (Estimate, LossWeights, MaeTable, l1_image, l2_vec, mae_report,
                     total_loss)
from .optim import Adam, FitReport, OptimConfig

__all__ = [
    "Adam", "DIRECT_CONFIG", "DirectObservation", "Estimate", "FitReport", "LossWeights",
    "MaeTable", "OptimConfig", "SSS_CONFIG", "SssObjective", "SssObservation", "fit_direct",
    "fit_sss", "l1_image", "l2_vec", "mae_report", "sss_physical", "sss_vector", "total_loss",
]
