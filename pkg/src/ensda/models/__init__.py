"""Forward models (linear advection-diffusion, shallow water) and model error."""

from .advdiff import AdvDiffConfig, LinearOperator, advdiff_cfl_numbers, build_advdiff_operator, step_linear
from .error import (
    BalancedSweQFactor,
    DenseQFactor,
    ModelErrorSpec,
    QFactor,
    model_error_covariance,
    q_factor,
    sample_model_error,
)
from .swe import SweAbort, SweConfig, available_backends, default_backend, double_jet_state, step_swe

__all__ = [
    "AdvDiffConfig",
    "LinearOperator",
    "advdiff_cfl_numbers",
    "build_advdiff_operator",
    "step_linear",
    "ModelErrorSpec",
    "QFactor",
    "DenseQFactor",
    "BalancedSweQFactor",
    "q_factor",
    "sample_model_error",
    "model_error_covariance",
    "SweAbort",
    "SweConfig",
    "available_backends",
    "default_backend",
    "double_jet_state",
    "step_swe",
]
