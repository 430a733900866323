"""Exploratory mean-variance portfolio optimization with market regimes.

Library layout:

- ``regimes``      continuous-time Markov chain machinery
- ``odes``         backward solvers for the value-function coefficients
- ``policy``       Gaussian policies, multiplier and value evaluation
- ``losses``       martingale increments, TD/OC losses, parameter updates
- ``sim_trainer``  training loop on a simulated market
- ``market_data``  ingestion, HMM regime labeling, rolling windows
- ``real_trainer`` training loop on observed price series
- ``backtest``     rolling-window evaluation and report statistics
- ``cli``          command-line entry points
"""
from ._kernels import backend
from .odes import TimeGrid, ValueCoefficients, emv_closed_form, solve_phcd
from .policy import (GaussianPolicy, InvestmentTarget, MarketParams,
                     classical_control, optimal_lambda, pit_policy,
                     policy_distribution, sample_action, value_function)
from .regimes import GeneratorMatrix, RegimePath, sample_regime_path, transition_matrix

__version__ = "0.1.0"

__all__ = [
    "GaussianPolicy", "GeneratorMatrix", "InvestmentTarget", "MarketParams",
    "RegimePath", "TimeGrid", "ValueCoefficients", "backend",
    "classical_control", "emv_closed_form", "optimal_lambda", "pit_policy",
    "policy_distribution", "sample_action", "sample_regime_path",
    "solve_phcd", "transition_matrix", "value_function", "__version__",
]
