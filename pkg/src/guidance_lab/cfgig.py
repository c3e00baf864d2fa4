"""Gibbs-style refinement sampling and a sequential Monte Carlo corrector.

The refinement sampler alternates partial renoising to a mid level
sigma_star with guided flow runs back to data space, after an initial guided
run from sigma_max at a milder weight.  The exact-flow variant replaces the
inner solver run by the closed-form contraction of the scalar Gaussian case,
which turns the chain into an AR(1) recursion with known variance sequence.

The SMC corrector reweights guided denoising diffusion transitions so the
weighted ensemble targets the tilted distribution rather than the guided
marginal.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import gaussian_theory
from .errors import ConfigError, NumericalError
from .guidance import DenoiserBase, GuidedDenoiser, make_guided
from .rng import chain_rng
from .schedule import NoiseSchedule, karras_sigmas, refinement_sigmas
from .solvers import integrate_flow
from .targets import AnalyticTarget

__all__ = [
    "CfgigConfig",
    "CfgigResult",
    "cfgig_sample",
    "gibbs_iteration",
    "exact_flow_iteration",
    "exact_flow_chain",
    "SmcResult",
    "smc_sample",
    "ess",
    "systematic_resample",
]


@dataclass(frozen=True)
class CfgigConfig:
    """Parameters of the refinement sampler.

    total_steps is the full solver-step budget; the initial run consumes
    initial_steps plus the remainder (total_steps - initial_steps) mod
    repetitions, and each of the `repetitions` refinement runs consumes
    floor((total_steps - initial_steps) / repetitions) steps, so the budget
    is met exactly.
    """

    w0: float
    w: float
    repetitions: int
    total_steps: int
    initial_steps: int
    sigma_star: float
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    method: str = "euler"

    def __post_init__(self):
        if not 1.0 <= self.w0 < self.w:
            raise ConfigError("need 1 <= w0 < w")
        if self.repetitions < 1:
            raise ConfigError("need at least one repetition")
        if not 2 <= self.initial_steps <= self.total_steps:
            raise ConfigError("need 2 <= initial_steps <= total_steps")
        if not self.sigma_min < self.sigma_star < self.sigma_max:
            raise ConfigError("need sigma_min < sigma_star < sigma_max")
        if self.refinement_steps < 2:
            raise ConfigError("each refinement run needs at least 2 steps")
        if self.method not in ("euler", "heun"):
            raise ConfigError("method must be 'euler' or 'heun'")
        if self.rho <= 0.0:
            raise ConfigError("rho must be positive")

    @property
    def remainder(self) -> int:
        return (self.total_steps - self.initial_steps) % self.repetitions

    @property
    def refinement_steps(self) -> int:
        return (self.total_steps - self.initial_steps) // self.repetitions


@dataclass(frozen=True)
class CfgigResult:
    """Refinement sampler output.

    denoiser_calls counts one chain's solver calls across all stages (every
    chain runs the same step sequence), independent of thread blocking.
    """

    samples: np.ndarray
    steps_per_stage: tuple
    denoiser_calls: int
    iterates: Optional[np.ndarray] = None  # (repetitions + 1, chains, d)


def gibbs_iteration(
    x0,
    guided: GuidedDenoiser,
    sigma_star: float,
    steps: int,
    noise,
    *,
    sigma_min: float,
    rho: float = 7.0,
    method: str = "euler",
):
    """One refinement update: renoise x0 to sigma_star, flow back to 0.

    `noise` must be standard normal of the same shape as x0; it is supplied
    by the caller so that chain-indexed random streams stay in one place.
    """
    x0 = np.asarray(x0, dtype=float)
    noisy = x0 + sigma_star * np.asarray(noise, dtype=float)
    sched = refinement_sigmas(sigma_star, steps, sigma_min, rho)
    res = integrate_flow(noisy, sched, guided, method=method)
    return res.x0, res.denoiser_calls


def cfgig_sample(
    target: AnalyticTarget,
    c,
    config: CfgigConfig,
    *,
    chains: int,
    seed: int,
    threads: int = 1,
    record_iterates: bool = False,
    strategy: str = "cfg",
    strategy_params: Optional[dict] = None,
) -> CfgigResult:
    """Run the refinement sampler for an ensemble of independent chains.

    Randomness is drawn per (chain, iteration) from streams keyed by the
    seed, so results are identical for any `threads` value.  The initial
    guided run uses weight w0, every refinement run weight w, both with the
    given strategy ('cfg' unless overridden; 'ideal' uses the target's
    tilted score).
    """
    if chains < 1:
        raise ConfigError("need at least one chain")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    d = target.dim
    extra = dict(strategy_params or {})

    def guided_at(weight: float) -> GuidedDenoiser:
        return make_guided(strategy, target, c, w=weight, **extra)

    init_levels = config.initial_steps + config.remainder
    init_sched = karras_sigmas(config.sigma_min, config.sigma_max, init_levels, config.rho)
    g0 = guided_at(config.w0)
    g = guided_at(config.w)

    iterates = np.empty((config.repetitions + 1, chains, d)) if record_iterates else None
    out = np.empty((chains, d))

    def run_block(lo: int, hi: int) -> int:
        nonlocal iterates, out
        idx = np.arange(lo, hi)
        x_init = np.stack(
            [chain_rng(seed, int(j), 0).standard_normal(d) * config.sigma_max for j in idx]
        )
        res = integrate_flow(x_init, init_sched, g0, method=config.method)
        x0 = res.x0
        calls = res.denoiser_calls
        if record_iterates:
            iterates[0, lo:hi] = x0
        for r in range(1, config.repetitions + 1):
            noise = np.stack([chain_rng(seed, int(j), r).standard_normal(d) for j in idx])
            x0, c_calls = gibbs_iteration(
                x0,
                g,
                config.sigma_star,
                config.refinement_steps,
                noise,
                sigma_min=config.sigma_min,
                rho=config.rho,
                method=config.method,
            )
            calls += c_calls
            if record_iterates:
                iterates[r, lo:hi] = x0
        out[lo:hi] = x0
        return calls

    block = max(1, -(-chains // threads))
    spans = [(lo, min(lo + block, chains)) for lo in range(0, chains, block)]
    if threads == 1:
        block_calls = [run_block(lo, hi) for lo, hi in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            block_calls = list(ex.map(lambda s: run_block(*s), spans))

    stages = (init_levels,) + (config.refinement_steps,) * config.repetitions
    return CfgigResult(
        samples=out, steps_per_stage=stages, denoiser_calls=block_calls[0], iterates=iterates
    )


# ---------------------------------------------------------------------------
# exact-flow route for the scalar Gaussian case (context c = 0)


def exact_flow_iteration(x0, gamma: float, w: float, sigma_star: float, noise):
    """Refinement update with the solver replaced by the exact contraction."""
    cf = gaussian_theory.flow_contraction(gamma, w, sigma_star)
    return cf * (np.asarray(x0, dtype=float) + sigma_star * np.asarray(noise, dtype=float))


def exact_flow_chain(
    gamma: float,
    w: float,
    sigma_star: float,
    repetitions: int,
    *,
    chains: int,
    seed: int,
    init_variance: Optional[float] = None,
    keep_history: bool = False,
):
    """Simulate the exact-flow refinement chain from its usual start.

    Chains start at the conditional posterior spread (variance gamma^2 /
    (1 + gamma^2) unless overridden) and apply `repetitions` exact updates.
    Returns the final (chains,) array, or the (repetitions + 1, chains)
    history when keep_history is set.
    """
    if init_variance is None:
        init_variance = gaussian_theory.tilted_moments(gamma, 1.0, 0.0)[1]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = np.sqrt(init_variance) * rng.standard_normal(chains)
    hist = [x.copy()] if keep_history else None
    for _ in range(repetitions):
        x = exact_flow_iteration(x, gamma, w, sigma_star, rng.standard_normal(chains))
        if keep_history:
            hist.append(x.copy())
    return np.stack(hist) if keep_history else x


# ---------------------------------------------------------------------------
# sequential Monte Carlo corrector


def _check_log_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or np.any(np.isnan(lw)):
        raise ValueError("log weights must be a non-empty array without NaNs")
    if not np.any(lw > -np.inf):
        raise ValueError("all log weights are -inf; the ensemble carries no mass")
    return lw


def ess(log_weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2 from log weights."""
    lw = _check_log_weights(log_weights)
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def systematic_resample(log_weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling; returns selected indices, one per weight."""
    lw = _check_log_weights(log_weights)
    n = lw.size
    probs = np.exp(lw - logsumexp(lw))
    probs = probs / probs.sum()
    u = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(probs), u), n - 1)


@dataclass(frozen=True)
class SmcResult:
    """Weighted particle approximation of the tilted target at sigma_min.

    ``particles`` and ``log_weights`` form the weighted ensemble at noise
    level ``sigma``; ``draws`` are unweighted samples obtained by one final
    systematic resample.  ``lineage`` maps each particle to the index of its
    time-zero ancestor, so entries sharing a value were duplicated by some
    resampling event and are statistically dependent.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    sigma: float
    ess_trace: np.ndarray
    resample_count: int
    lineage: np.ndarray
    draws: np.ndarray

    @property
    def ess(self) -> float:
        """Effective sample size of the terminal weighted ensemble."""
        return ess(self.log_weights)

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights - logsumexp(self.log_weights)
        p = np.exp(lw)
        return p / p.sum()

    def weighted_mean(self) -> np.ndarray:
        return np.sum(self.normalized_weights()[:, None] * self.particles, axis=0)

    def weighted_variance(self) -> np.ndarray:
        p = self.normalized_weights()
        m = np.sum(p[:, None] * self.particles, axis=0)
        return np.sum(p[:, None] * (self.particles - m) ** 2, axis=0)


def smc_sample(
    target: AnalyticTarget,
    c,
    w: float,
    *,
    particles: int,
    schedule: NoiseSchedule,
    seed: int,
    resample_threshold: float = 0.5,
    proposal_denoiser=None,
) -> SmcResult:
    """Guided denoising diffusion with importance weights toward the tilt.

    Particles move through the Gaussian transition whose mean interpolates
    between the current state and a guided denoiser output; the log-weight
    increment per transition is

        w (w - 1) (s_from^2 - s_to^2) / (2 s_from^2 s_to^2) * ||D_cond - D_uncond||^2

    evaluated before the move.  Weights are reset after a systematic
    resample, triggered when the effective sample size drops below
    resample_threshold * particles.  An effective sample size below two is
    treated as a diagnostic failure and raises NumericalError.

    The transition mean uses the plain weight-w combination of the
    conditional and unconditional denoisers unless ``proposal_denoiser`` (a
    callable ``(x, sigma) -> denoised``) overrides it; the weight increments
    always use the combination above.
    """
    if particles < 2:
        raise ConfigError("need at least two particles")
    if not 0.0 <= resample_threshold <= 1.0:
        raise ConfigError("resample_threshold must lie in [0, 1]")
    base = DenoiserBase.from_target(target, c)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    d = target.dim
    x = schedule.sigma_max * rng.standard_normal((particles, d))
    log_w = np.zeros(particles)
    lineage = np.arange(particles)
    ess_trace = []
    n_resample = 0
    for sig_from, sig_to in schedule.transitions():
        d_cond = np.asarray(base.cond(x, sig_from), dtype=float)
        d_unc = np.asarray(base.uncond(x, sig_from), dtype=float)
        if proposal_denoiser is None:
            prop = w * d_cond + (1.0 - w) * d_unc
        else:
            prop = np.asarray(proposal_denoiser(x, sig_from), dtype=float)
        gap2 = np.sum((d_cond - d_unc) ** 2, axis=1)
        log_w = log_w + w * (w - 1.0) * (sig_from**2 - sig_to**2) / (
            2.0 * sig_from**2 * sig_to**2
        ) * gap2
        cur_ess = ess(log_w)
        ess_trace.append(cur_ess)
        if cur_ess < 2.0:
            raise NumericalError(
                f"effective sample size collapsed to {cur_ess:.3f} "
                f"at the transition from sigma={sig_from:g}"
            )
        if cur_ess < resample_threshold * particles:
            idx = systematic_resample(log_w, rng)
            x, prop = x[idx], prop[idx]
            lineage = lineage[idx]
            log_w = np.zeros(particles)
            n_resample += 1
        ratio2 = sig_to**2 / sig_from**2
        mean = ratio2 * x + (1.0 - ratio2) * prop
        std = np.sqrt(sig_to**2 * (sig_from**2 - sig_to**2) / sig_from**2)
        x = mean + std * rng.standard_normal((particles, d))
    draws = x[systematic_resample(log_w, rng)]
    return SmcResult(
        particles=x,
        log_weights=log_w,
        sigma=schedule.sigma_min,
        ess_trace=np.asarray(ess_trace),
        resample_count=n_resample,
        lineage=lineage,
        draws=draws,
    )
