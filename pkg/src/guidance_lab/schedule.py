"""Noise level schedules for probability-flow ODE integration.

A schedule is a finite decreasing grid of noise levels sigma_0 > ... >
sigma_{T-1} > 0.  Solvers walk the grid from the largest level down to the
smallest and finish with a separate denoising jump to sigma = 0, so the grid
itself never contains zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["NoiseSchedule", "karras_sigmas", "refinement_sigmas", "schedule_from_levels"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Decreasing grid of positive noise levels.

    Parameters
    ----------
    sigmas : np.ndarray
        Strictly decreasing, strictly positive levels, shape (T,), T >= 2.
    """

    sigmas: np.ndarray

    def __post_init__(self):
        sig = np.array(self.sigmas, dtype=float)
        if sig.ndim != 1 or sig.size < 2:
            raise ConfigError("schedule needs a 1-d grid with at least two levels")
        if not np.all(np.isfinite(sig)):
            raise ConfigError("schedule levels must be finite")
        if not np.all(sig > 0.0):
            raise ConfigError("schedule levels must be strictly positive")
        if not np.all(np.diff(sig) < 0.0):
            raise ConfigError("schedule levels must be strictly decreasing")
        sig.flags.writeable = False
        object.__setattr__(self, "sigmas", sig)

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[-1])

    def __len__(self) -> int:
        return int(self.sigmas.size)

    def transitions(self):
        """Yield consecutive (sigma_from, sigma_to) pairs in integration order."""
        for a, b in zip(self.sigmas[:-1], self.sigmas[1:]):
            yield float(a), float(b)

    def to_json(self) -> str:
        """Serialize the levels as a JSON array, for experiment provenance."""
        return json.dumps([float(s) for s in self.sigmas])


def karras_sigmas(sigma_min: float, sigma_max: float, num_levels: int, rho: float = 7.0) -> NoiseSchedule:
    """Power-warped noise grid, decreasing from sigma_max to sigma_min.

    Levels are equispaced in sigma**(1/rho): the i-th level (counting from the
    sigma_max end) is

        (sigma_max**(1/rho) + i/(T-1) * (sigma_min**(1/rho) - sigma_max**(1/rho)))**rho.

    Both endpoints are pinned to the requested values exactly.
    """
    if not (0.0 < sigma_min < sigma_max):
        raise ConfigError("need 0 < sigma_min < sigma_max")
    if num_levels < 2:
        raise ConfigError("need at least two levels")
    if rho <= 0.0:
        raise ConfigError("rho must be positive")
    t = np.arange(num_levels) / (num_levels - 1)
    inv = sigma_max ** (1.0 / rho) + t * (sigma_min ** (1.0 / rho) - sigma_max ** (1.0 / rho))
    sig = inv**rho
    sig[0] = sigma_max
    sig[-1] = sigma_min
    return NoiseSchedule(sig)


def refinement_sigmas(sigma_start: float, num_levels: int, sigma_min: float, rho: float = 7.0) -> NoiseSchedule:
    """Grid for a refinement pass that re-enters the flow at sigma_start.

    Same warp as `karras_sigmas` but with sigma_start as the top level, for the
    short solver runs inside Gibbs-style refinement.
    """
    return karras_sigmas(sigma_min, sigma_start, num_levels, rho)


def schedule_from_levels(levels) -> NoiseSchedule:
    """Build a schedule from an explicit table of noise levels.

    The table must already be strictly decreasing; no sorting is applied.
    """
    return NoiseSchedule(np.asarray(list(levels), dtype=float))
