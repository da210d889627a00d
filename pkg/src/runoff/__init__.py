"""Bayesian correction of reporting delays in surveillance counts."""

from .inference import PosteriorSamples, SamplerConfig, diagnostics, run_mcmc
from .model import ModelSpec, ParameterState, Variant
from .nowcast import NowcastResult, nowcast, nowcast_totals, predict_cells, rolling_nowcast
from .selection import dic, waic
from .simulator import Outbreak, SimulationScenario, simulate
from .triangle import (
    LineListRecord,
    RegionMap,
    ReportingTriangle,
    build_triangle,
    censor,
    marginal_totals,
)

__version__ = "0.1.0"
