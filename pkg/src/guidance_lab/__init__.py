"""Numerical laboratory for guided diffusion sampling on tractable targets.

The package provides closed-form Gaussian-mixture targets, guided denoiser
combinations, probability-flow ODE solvers, a Gibbs-style refinement sampler
with an SMC corrector, closed-form scalar Gaussian theory, and sample
metrics, wired together behind a small CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    GuidanceLabError,
    NumericalError,
    QuadratureError,
    UnsupportedTargetError,
)

__all__ = [
    "__version__",
    "GuidanceLabError",
    "ConfigError",
    "NumericalError",
    "QuadratureError",
    "UnsupportedTargetError",
]
