"""Multiple-try Metropolis with locally balanced weights on discrete spaces."""

from .sampler import (
    CapabilityError,
    ChainTrace,
    DegenerateSelection,
    InitializationError,
    LbmhConfig,
    ModelSpace,
    MtmConfig,
    Proposals,
    StepStats,
    WeightSpec,
    balancing_eval,
    lbmh_step,
    log_weight,
    mtm_step,
    run_chain,
)

__all__ = [
    "CapabilityError",
    "ChainTrace",
    "DegenerateSelection",
    "InitializationError",
    "LbmhConfig",
    "ModelSpace",
    "MtmConfig",
    "Proposals",
    "StepStats",
    "WeightSpec",
    "balancing_eval",
    "lbmh_step",
    "log_weight",
    "mtm_step",
    "run_chain",
]

__version__ = "0.1.0"
