"""Exact simulation and heavy-traffic limits of time-varying many-server
queues with abandonment.

The package simulates the prelimit count process exactly (thinning with
certified rate bounds), solves the fluid and diffusion limits numerically,
evaluates the closed-form long-run laws, and certifies the convergence
claims statistically through the ``validate`` CLI command.
"""

from ._backend import NUMBA_ENABLED, backend_name
from .diffusion import (
    DiffusionPath,
    StationaryLaw,
    law_cdf,
    law_moments,
    law_pdf,
    qed_normalizer,
    sde_terminals,
    solve_sde,
    stationary_law,
)
from .fluid import FluidPath, Regime, fluid_equilibrium, regime_classify, solve_fluid
from .mcsim import (
    MartingaleReport,
    RecordFlags,
    SamplePath,
    SimConfig,
    martingale_report,
    scaled_paths,
    simulate,
)
from .rates import PrelimitSystem, RateFunction, ScalingScheme, ServerCount, prelimit
from .stats import BDChain, EmpiricalSample, bd_stationary, ks_statistic, moments, tv_distance

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "RateFunction",
    "ScalingScheme",
    "ServerCount",
    "PrelimitSystem",
    "prelimit",
    "FluidPath",
    "Regime",
    "solve_fluid",
    "fluid_equilibrium",
    "regime_classify",
    "DiffusionPath",
    "StationaryLaw",
    "solve_sde",
    "sde_terminals",
    "stationary_law",
    "qed_normalizer",
    "law_pdf",
    "law_cdf",
    "law_moments",
    "SimConfig",
    "RecordFlags",
    "SamplePath",
    "MartingaleReport",
    "simulate",
    "scaled_paths",
    "martingale_report",
    "EmpiricalSample",
    "BDChain",
    "ks_statistic",
    "moments",
    "bd_stationary",
    "tv_distance",
    "__version__",
]
