"""Assimilation schemes: analytic KF, ETKF, localised ETKF, and IEWPF."""

from .etkf import etkf_analysis, etkf_core
from .iewpf import IewpfParams, iewpf_analysis, solve_alpha
from .kalman import GaussianBelief, kf_analysis, kf_forecast
from .letkf import letkf_analysis
from .localisation import LocalisationPlan, build_localisation_plan, gaspari_cohn

__all__ = [
    "GaussianBelief",
    "kf_forecast",
    "kf_analysis",
    "etkf_analysis",
    "etkf_core",
    "LocalisationPlan",
    "build_localisation_plan",
    "gaspari_cohn",
    "letkf_analysis",
    "IewpfParams",
    "iewpf_analysis",
    "solve_alpha",
]
