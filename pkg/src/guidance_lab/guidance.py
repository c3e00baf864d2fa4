"""Guided denoisers: ways of combining a conditional/unconditional pair.

A denoiser is any callable (x, sigma) -> x_hat operating on (n, d) or (d,)
arrays.  A `DenoiserBase` holds the conditional and unconditional pair for a
fixed context; the strategies below combine the pair into the denoiser the
flow solver actually calls.  The "cfg++" strategy has no fixed weight - its
weight depends on the transition being taken - so strategy objects expose
`resolve(sigma_from, sigma_to)` which the solvers call once per transition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConfigError
from .targets import (
    AnalyticTarget,
    conditional_denoiser,
    smoothed_prior_denoiser,
    tilted_smoothed_score,
)

__all__ = [
    "STRATEGIES",
    "DenoiserBase",
    "GuidedDenoiser",
    "cfg_denoise",
    "interval_cfg_denoise",
    "cfg_pp_weight",
    "delayed_sigma_pair",
    "delayed_denoise",
    "ideal_denoise",
    "make_guided",
]

STRATEGIES = ("uncond", "cond", "cfg", "li-cfg", "cfg++", "delayed", "ideal")

DenoiserFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class DenoiserBase:
    """Conditional/unconditional denoiser pair with the context bound in."""

    uncond: DenoiserFn
    cond: DenoiserFn

    @classmethod
    def from_target(cls, target: AnalyticTarget, c) -> "DenoiserBase":
        def uncond(x, sigma):
            return smoothed_prior_denoiser(target, x, sigma)

        def cond(x, sigma):
            return conditional_denoiser(target, c, x, sigma)

        return cls(uncond=uncond, cond=cond)


def cfg_denoise(base: DenoiserBase, w: float, x, sigma: float):
    """Weight-w combination w * conditional + (1 - w) * unconditional."""
    if w == 0.0:
        return base.uncond(x, sigma)
    if w == 1.0:
        return base.cond(x, sigma)
    return w * base.cond(x, sigma) + (1.0 - w) * base.uncond(x, sigma)


def interval_cfg_denoise(
    base: DenoiserBase, w: float, sigma_lo: float, sigma_hi: float, x, sigma: float
):
    """Apply weight w only for sigma inside [sigma_lo, sigma_hi] (inclusive);
    outside the interval the plain conditional (weight 1) is used."""
    active = sigma_lo <= sigma <= sigma_hi
    return cfg_denoise(base, w if active else 1.0, x, sigma)


def cfg_pp_weight(lam: float, sigma_from: float, sigma_to: float) -> float:
    """Transition-dependent weight lam * sigma_from / (sigma_from - sigma_to).

    Chosen so that a denoising step with this weight equals mixing the pair
    at weight lam in the denoised endpoint while keeping the unconditional
    noise direction.
    """
    if not sigma_from > sigma_to >= 0.0:
        raise ValueError("need sigma_from > sigma_to >= 0")
    return lam * sigma_from / (sigma_from - sigma_to)


def delayed_sigma_pair(w: float, delta: float, sigma: float) -> tuple[float, float]:
    """Noise levels (sigma_minus, sigma_plus) of the two-level combination."""
    if w <= 1.0:
        raise ValueError("two-level combination needs w > 1")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    sigma_minus = sigma * math.sqrt(w / (1.0 + delta))
    sigma_plus = sigma * math.sqrt((w - 1.0) / delta)
    return sigma_minus, sigma_plus


def delayed_denoise(base: DenoiserBase, w: float, delta: float, x, sigma: float):
    """Two-level combination: conditional late (sigma_minus), unconditional
    early (sigma_plus).  At delta = w - 1 both levels collapse to sigma and
    this reduces to the plain weight-w combination."""
    sigma_minus, sigma_plus = delayed_sigma_pair(w, delta, sigma)
    return w * base.cond(x, sigma_minus) + (1.0 - w) * base.uncond(x, sigma_plus)


def ideal_denoise(target: AnalyticTarget, c, w: float, x, sigma: float):
    """Denoiser of the tilted target itself, via its smoothed score."""
    x = np.asarray(x, dtype=float)
    return x + sigma**2 * tilted_smoothed_score(target, c, w, x, sigma)


@dataclass(frozen=True)
class GuidedDenoiser:
    """A guidance strategy bound to a denoiser pair (and target, if needed).

    `resolve(sigma_from, sigma_to)` returns the plain (x, sigma) callable the
    solver uses for that transition.  Strategies whose weight does not depend
    on the transition may also be called directly.
    """

    kind: str
    base: Optional[DenoiserBase]
    params: Mapping[str, float] = field(default_factory=dict)
    target: Optional[AnalyticTarget] = None
    context: object = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown guidance strategy '{self.kind}'")
        p = dict(self.params)
        if self.kind in ("cfg", "li-cfg", "delayed") and "w" not in p:
            raise ConfigError(f"strategy '{self.kind}' needs parameter 'w'")
        if self.kind in ("cfg", "li-cfg") and not p["w"] >= 0.0:
            raise ConfigError(f"strategy '{self.kind}' needs w >= 0")
        if self.kind == "li-cfg":
            lo, hi = p.get("sigma_lo"), p.get("sigma_hi")
            if lo is None or hi is None or not 0.0 <= lo < hi:
                raise ConfigError("li-cfg needs 0 <= sigma_lo < sigma_hi")
        if self.kind == "cfg++":
            lam = p.get("lam")
            if lam is None or not 0.0 <= lam <= 1.0:
                raise ConfigError("cfg++ needs lam in [0, 1]")
        if self.kind == "delayed":
            if p["w"] <= 1.0 or p.get("delta", 0.0) <= 0.0:
                raise ConfigError("delayed needs w > 1 and delta > 0")
        if self.kind == "ideal":
            if self.target is None:
                raise ConfigError("ideal guidance needs an analytic target")
            if "w" not in p or not p["w"] >= 0.0:
                raise ConfigError("ideal guidance needs parameter 'w' >= 0")
        elif self.base is None:
            raise ConfigError(f"strategy '{self.kind}' needs a denoiser pair")

    def __call__(self, x, sigma: float):
        if self.kind == "cfg++":
            raise ConfigError("cfg++ has no transition-free form; use resolve()")
        return self._static(x, sigma)

    def _static(self, x, sigma: float):
        p = self.params
        if self.kind == "uncond":
            return self.base.uncond(x, sigma)
        if self.kind == "cond":
            return self.base.cond(x, sigma)
        if self.kind == "cfg":
            return cfg_denoise(self.base, p["w"], x, sigma)
        if self.kind == "li-cfg":
            return interval_cfg_denoise(self.base, p["w"], p["sigma_lo"], p["sigma_hi"], x, sigma)
        if self.kind == "delayed":
            return delayed_denoise(self.base, p["w"], p["delta"], x, sigma)
        if self.kind == "ideal":
            return ideal_denoise(self.target, self.context, p["w"], x, sigma)
        raise AssertionError(self.kind)

    def resolve(self, sigma_from: float, sigma_to: float) -> DenoiserFn:
        """Denoiser to use for the transition sigma_from -> sigma_to."""
        if self.kind == "cfg++":
            w = cfg_pp_weight(self.params["lam"], sigma_from, sigma_to)
            return lambda x, sigma: cfg_denoise(self.base, w, x, sigma)
        return self._static


def make_guided(kind: str, target: AnalyticTarget, c, **params) -> GuidedDenoiser:
    """Build a guided denoiser for an analytic target and fixed context."""
    base = DenoiserBase.from_target(target, c)
    return GuidedDenoiser(kind=kind, base=base, params=params, target=target, context=c)
