"""Goodness-of-fit testing via posterior-conditioned exchangeable data copies."""

from .core import (
    ModelPlugin,
    PosteriorDraws,
    StageError,
    TestConfig,
    TestOutcome,
    compute_pvalue,
    log_copy_target,
    run_test,
)
from .mcmc import ChainConfig, CopySet, MHKernel, mh_chain, permuted_serial_sampler

__version__ = "0.1.0"

__all__ = [
    "ModelPlugin",
    "PosteriorDraws",
    "StageError",
    "TestConfig",
    "TestOutcome",
    "compute_pvalue",
    "log_copy_target",
    "run_test",
    "ChainConfig",
    "CopySet",
    "MHKernel",
    "mh_chain",
    "permuted_serial_sampler",
    "__version__",
]
