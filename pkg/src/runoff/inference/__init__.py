from .diagnostics import Diagnostics, diagnostics, ess, split_rhat
from .sampler import (
    PosteriorSamples,
    SamplerConfig,
    adapt_step,
    gibbs_precision,
    precision_conditional,
    run_mcmc,
)

__all__ = [
    "Diagnostics",
    "PosteriorSamples",
    "SamplerConfig",
    "adapt_step",
    "diagnostics",
    "ess",
    "gibbs_precision",
    "precision_conditional",
    "run_mcmc",
    "split_rhat",
]
