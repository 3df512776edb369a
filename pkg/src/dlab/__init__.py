"""Midpoint-anchored disagreement bounds, computed exactly on finite-support populations."""
from .kernels import BACKEND
from .population import (
    AnchorCertificate,
    ContractError,
    Population,
    Predictor,
    check_anchor_bound,
    check_local_curve_bound,
    check_midpoint_identity,
    disagreement,
    midpoint,
    mse,
    weighted_norm,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AnchorCertificate", "ContractError", "Population", "Predictor",
    "check_anchor_bound", "check_local_curve_bound", "check_midpoint_identity",
    "disagreement", "midpoint", "mse", "weighted_norm",
]
