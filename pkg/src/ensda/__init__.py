"""Ensemble and analytic data assimilation on periodic Cartesian grids.

Subpackages/modules:

- ``gridfield``: grids, state vectors, Gaussian random fields
- ``models``: advection-diffusion and shallow-water forward models, model error
- ``observing``: observation networks, twin experiments
- ``filters``: KF, ETKF, localised ETKF, equal-weights particle filter
- ``metrics``: verification metrics (RMSE, FCD, d_IQ, coverage, CRPS, ...)
- ``drift``: passive drifter advection and trajectory forecasting
- ``harness``: experiment configs, presets, replication loops, CLI
"""

__version__ = "0.1.0"
