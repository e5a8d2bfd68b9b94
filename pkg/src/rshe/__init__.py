"""Numerical laboratory for the rearranged stochastic heat equation (RSHE)
on the torus and the mean-field games it drives.

States are discrete quantile fields (monotone grid vectors on the
half-torus); dynamics is exact per-mode Ornstein-Uhlenbeck propagation plus
monotone rearrangement; equilibria of the associated mean-field game are
computed as fixed points of the costate map by blockwise backward Picard
iteration and verified through Pontryagin residuals, Gateaux derivatives
and the distributed-feedback representation.
"""

from .kernels import KERNEL_LANE
from .quantile import (
    DiscreteMeasure,
    GridFunction,
    QuantileField,
    cdf_eval,
    grad_norm_sq,
    measure_from_quantile,
    quantile_from_measure,
    rearrange,
    w2_distance,
)
from .spectral import NoiseModel, NoiseStream, SpectralState
from .solver import (
    PathBundle,
    RsheStepRecord,
    deterministic_step,
    rshe_step,
    semigroup_apply,
    simulate,
    simulate_driftless,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "KERNEL_LANE",
    "QuantileField",
    "GridFunction",
    "DiscreteMeasure",
    "rearrange",
    "quantile_from_measure",
    "measure_from_quantile",
    "w2_distance",
    "cdf_eval",
    "grad_norm_sq",
    "NoiseModel",
    "NoiseStream",
    "SpectralState",
    "PathBundle",
    "RsheStepRecord",
    "rshe_step",
    "deterministic_step",
    "simulate",
    "simulate_driftless",
    "semigroup_apply",
]
