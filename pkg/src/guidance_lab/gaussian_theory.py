"""Closed-form results for the scalar Gaussian benchmark.

Prior x0 ~ N(0, 1) with observation c ~ N(x0, gamma^2).  Everything a guided
sampler produces on this target has a closed form: the guided (weight-w)
marginal is Gaussian, the probability-flow ODE is linear and integrates to a
pure contraction when c = 0, and the Gibbs-style refinement chain becomes an
AR(1) recursion whose variance sequence is explicit.  These formulas are the
independent reference route for the numerical machinery in the rest of the
package.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "prior_denoiser",
    "conditional_denoiser",
    "guided_denoiser",
    "tilted_moments",
    "guided_marginal_variance",
    "guided_marginal_mean",
    "variance_gap",
    "flow_contraction",
    "flow_factor",
    "exact_flow_map",
    "refinement_variance",
    "stationary_variance",
    "variance_upper_bound",
]


def prior_denoiser(x, sigma: float):
    """Posterior mean of x0 given x = x0 + sigma z under the N(0,1) prior."""
    return np.asarray(x, dtype=float) / (1.0 + sigma**2)


def conditional_denoiser(gamma: float, c: float, x, sigma: float):
    """Posterior mean of x0 given x and the observation c."""
    x = np.asarray(x, dtype=float)
    denom = gamma**2 * (1.0 + sigma**2) + sigma**2
    return (gamma**2 * x + sigma**2 * c) / denom


def guided_denoiser(gamma: float, w: float, c: float, x, sigma: float):
    """Weight-w combination of conditional and unconditional denoisers."""
    return w * conditional_denoiser(gamma, c, x, sigma) + (1.0 - w) * prior_denoiser(x, sigma)


def tilted_moments(gamma: float, w: float, c: float) -> tuple[float, float]:
    """Mean and variance of the power-w tilted posterior at sigma = 0."""
    if w <= 0.0:
        raise ValueError("tilt exponent w must be positive")
    return w * c / (w + gamma**2), gamma**2 / (w + gamma**2)


def guided_marginal_variance(gamma: float, w: float, sigma: float) -> float:
    """Variance of the weight-w guided marginal at noise level sigma."""
    n = gamma**2 * (1.0 + sigma**2) + sigma**2
    return (1.0 + sigma**2) * n / (w + n)


def guided_marginal_mean(gamma: float, w: float, c: float, sigma: float) -> float:
    """Mean of the weight-w guided marginal at noise level sigma."""
    n = gamma**2 * (1.0 + sigma**2) + sigma**2
    return guided_marginal_variance(gamma, w, sigma) * w * c / n


def variance_gap(gamma: float, w: float, sigma: float) -> float:
    """Smoothed tilted variance minus guided marginal variance.

    Positive for w > 1: the guided marginal is strictly narrower than the
    tilted target convolved with the same noise.
    """
    _, v_tilt = tilted_moments(gamma, w, 0.0)
    return sigma**2 + v_tilt - guided_marginal_variance(gamma, w, sigma)


def flow_contraction(gamma: float, w: float, sigma_star: float) -> float:
    """Contraction factor of the guided flow from sigma_star down to 0 (c = 0).

    The guided probability-flow ODE is linear here, so integrating it from
    sigma_star to 0 multiplies the state by this constant.
    """
    num = gamma**w * (1.0 + sigma_star**2) ** (0.5 * (w - 1.0))
    den = (gamma**2 + (1.0 + gamma**2) * sigma_star**2) ** (0.5 * w)
    return num / den


def flow_factor(gamma: float, w: float, sigma_from: float, sigma_to: float) -> float:
    """Exact flow multiplier between two noise levels (c = 0)."""
    return flow_contraction(gamma, w, sigma_from) / flow_contraction(gamma, w, sigma_to)


def exact_flow_map(gamma: float, w: float, sigma_star: float, x):
    """Exact endpoint of the guided flow started at (x, sigma_star), c = 0."""
    return flow_contraction(gamma, w, sigma_star) * np.asarray(x, dtype=float)


def stationary_variance(gamma: float, w: float, sigma_star: float) -> float:
    """Limit variance of the refinement recursion x <- cf * (x + sigma_star z)."""
    c2 = flow_contraction(gamma, w, sigma_star) ** 2
    if c2 >= 1.0:
        raise ValueError("refinement recursion is not contracting at these parameters")
    return sigma_star**2 * c2 / (1.0 - c2)


def refinement_variance(
    gamma: float, w: float, sigma_star: float, repetitions: int, v0: float | None = None
) -> float:
    """Variance after `repetitions` exact-flow refinement iterations.

    v0 defaults to the variance of the conditional posterior (the weight-1
    tilt), which is where the refinement chain is initialized.
    """
    if repetitions < 0:
        raise ValueError("repetitions must be >= 0")
    if v0 is None:
        v0 = tilted_moments(gamma, 1.0, 0.0)[1]
    c2 = flow_contraction(gamma, w, sigma_star) ** 2
    v_inf = stationary_variance(gamma, w, sigma_star)
    return c2**repetitions * (v0 - v_inf) + v_inf


def variance_upper_bound(gamma: float, w: float, sigma_star: float) -> float:
    """Bound sigma_star^2 + tilted variance on the refinement variance."""
    _, v_tilt = tilted_moments(gamma, w, 0.0)
    return sigma_star**2 + v_tilt
