"""Probability-flow ODE solvers over a noise schedule.

The flow is dx/dsigma = (x - D(x, sigma)) / sigma for a denoiser D.  Both
steppers take one transition sigma_from -> sigma_to; `integrate_flow` walks a
whole schedule and finishes with the exact denoising jump to sigma = 0 (a
plain denoiser evaluation at the last level).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigError, NumericalError
from .guidance import GuidedDenoiser
from .rng import chain_rng
from .schedule import NoiseSchedule

__all__ = ["ddim_step", "heun_step", "integrate_flow", "ode_ensemble", "FlowResult", "EnsembleResult"]

METHODS = ("euler", "heun")


def ddim_step(x, sigma_from: float, sigma_to: float, denoiser: Callable) -> np.ndarray:
    """One Euler step of the flow, written in denoiser form.

    x_to = (1 - sigma_to/sigma_from) * D(x, sigma_from) + (sigma_to/sigma_from) * x.
    sigma_to = 0 is allowed and returns D(x, sigma_from) exactly;
    sigma_to = sigma_from is a no-op.
    """
    if not sigma_from > 0.0:
        raise ValueError("sigma_from must be positive")
    if not 0.0 <= sigma_to <= sigma_from:
        raise ValueError("need 0 <= sigma_to <= sigma_from")
    x = np.asarray(x, dtype=float)
    if sigma_to == sigma_from:
        return x.copy()
    r = sigma_to / sigma_from
    return (1.0 - r) * np.asarray(denoiser(x, sigma_from), dtype=float) + r * x


def heun_step(x, sigma_from: float, sigma_to: float, denoiser: Callable) -> np.ndarray:
    """One second-order step: Euler predictor plus trapezoidal correction.

    Needs sigma_to > 0 because the corrector evaluates the flow drift at
    sigma_to; the jump to zero is handled separately by `integrate_flow`.
    """
    if not sigma_from > sigma_to > 0.0:
        raise ValueError("need sigma_from > sigma_to > 0")
    x = np.asarray(x, dtype=float)
    d_from = (x - np.asarray(denoiser(x, sigma_from), dtype=float)) / sigma_from
    pred = x + (sigma_to - sigma_from) * d_from
    d_to = (pred - np.asarray(denoiser(pred, sigma_to), dtype=float)) / sigma_to
    return x + 0.5 * (sigma_to - sigma_from) * (d_from + d_to)


@dataclass(frozen=True)
class FlowResult:
    """Output of a full flow integration."""

    x0: np.ndarray
    denoiser_calls: int
    transitions: int
    trajectory_sigmas: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None


def integrate_flow(
    x_init,
    schedule: NoiseSchedule,
    denoiser: Union[GuidedDenoiser, Callable],
    *,
    method: str = "euler",
    record_trajectory: bool = False,
    trajectory_cap: int = 4096,
) -> FlowResult:
    """Integrate the flow from schedule.sigma_max down to sigma = 0.

    `denoiser` is either a `GuidedDenoiser` (resolved once per transition,
    which transition-dependent strategies need) or a plain (x, sigma)
    callable.  The walk ends with the exact denoising jump from the last
    level to sigma = 0.  Raises `NumericalError` if any state goes non-finite.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}', expected one of {METHODS}")
    x = np.asarray(x_init, dtype=float)
    n_states = len(schedule) + 1  # levels plus the sigma = 0 endpoint
    if record_trajectory and n_states > trajectory_cap:
        raise ConfigError(
            f"trajectory would hold {n_states} states, over the cap {trajectory_cap}"
        )

    calls = 0

    def resolve(sig_from: float, sig_to: float) -> Callable:
        fn = denoiser.resolve(sig_from, sig_to) if hasattr(denoiser, "resolve") else denoiser

        def counted(xx, sigma):
            nonlocal calls
            calls += 1
            return fn(xx, sigma)

        return counted

    states = [x.copy()] if record_trajectory else None
    sigmas_out = [schedule.sigma_max] if record_trajectory else None
    n_trans = 0
    for i, (sig_from, sig_to) in enumerate(schedule.transitions()):
        fn = resolve(sig_from, sig_to)
        if method == "euler":
            x = ddim_step(x, sig_from, sig_to, fn)
        else:
            x = heun_step(x, sig_from, sig_to, fn)
        n_trans += 1
        if not np.all(np.isfinite(x)):
            raise NumericalError(
                f"non-finite state after transition {i} (sigma {sig_from:g} -> {sig_to:g})"
            )
        if record_trajectory:
            states.append(x.copy())
            sigmas_out.append(sig_to)

    sig_last = schedule.sigma_min
    x = ddim_step(x, sig_last, 0.0, resolve(sig_last, 0.0))
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite state after the final denoise at sigma {sig_last:g}")
    if record_trajectory:
        states.append(x.copy())
        sigmas_out.append(0.0)
        return FlowResult(
            x0=x,
            denoiser_calls=calls,
            transitions=n_trans,
            trajectory_sigmas=np.asarray(sigmas_out),
            trajectory=np.stack(states, axis=0),
        )
    return FlowResult(x0=x, denoiser_calls=calls, transitions=n_trans)


@dataclass(frozen=True)
class EnsembleResult:
    """Independent flow integrations from seeded Gaussian initial noise.

    denoiser_calls counts the solver's denoiser invocations for one chain's
    integration (every chain walks the same schedule), so the value does not
    depend on how chains are grouped into thread blocks.
    """

    samples: np.ndarray
    denoiser_calls: int
    trajectory_sigmas: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None  # (states, chains, d)


def ode_ensemble(
    denoiser: Union[GuidedDenoiser, Callable],
    schedule: NoiseSchedule,
    *,
    dim: int,
    chains: int,
    seed: int,
    method: str = "euler",
    threads: int = 1,
    record_trajectory: bool = False,
    trajectory_cap: int = 4096,
) -> EnsembleResult:
    """Integrate the flow for `chains` chains from x ~ N(0, sigma_max^2 I).

    Chain j's initial noise comes from the (seed, j, 0) stream, so outputs
    are identical for any thread count.
    """
    if chains < 1:
        raise ConfigError("need at least one chain")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    samples = np.empty((chains, dim))
    traj = None
    sig_out = None
    if record_trajectory:
        n_states = len(schedule) + 1
        if n_states > trajectory_cap:
            raise ConfigError(
                f"trajectory would hold {n_states} states, over the cap {trajectory_cap}"
            )
        traj = np.empty((n_states, chains, dim))

    def run_block(span) -> int:
        nonlocal sig_out
        lo, hi = span
        x_init = np.stack(
            [schedule.sigma_max * chain_rng(seed, j, 0).standard_normal(dim) for j in range(lo, hi)]
        )
        res = integrate_flow(
            x_init,
            schedule,
            denoiser,
            method=method,
            record_trajectory=record_trajectory,
            trajectory_cap=trajectory_cap,
        )
        samples[lo:hi] = res.x0
        if record_trajectory:
            traj[:, lo:hi] = res.trajectory
            sig_out = res.trajectory_sigmas
        return res.denoiser_calls

    block = max(1, -(-chains // threads))
    spans = [(lo, min(lo + block, chains)) for lo in range(0, chains, block)]
    if threads == 1:
        block_calls = [run_block(span) for span in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            block_calls = list(ex.map(run_block, spans))

    return EnsembleResult(
        samples=samples,
        denoiser_calls=block_calls[0],
        trajectory_sigmas=sig_out,
        trajectory=traj,
    )
