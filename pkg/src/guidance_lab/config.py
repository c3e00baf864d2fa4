"""Experiment config schema (version 1): parsing and validation.

A config is a JSON object that fully determines one experiment: the target,
the context, the guidance strategy, the sampler, and which metrics to
report.  Validation here constructs the actual objects the modules use, so a
config that parses cleanly will also run.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cfgig import CfgigConfig
from .errors import ConfigError
from .guidance import STRATEGIES, make_guided
from .schedule import NoiseSchedule, karras_sigmas
from .targets import (
    AnalyticTarget,
    canonical_bimodal_target,
    standard_gaussian_target,
    target_from_config,
)

__all__ = ["SCHEMA_VERSION", "ExperimentConfig", "load_config_file"]

SCHEMA_VERSION = 1

ALGORITHMS = ("ode", "cfgig", "smc")
METRIC_NAMES = ("moments", "w2", "ks", "prdc")

_GUIDANCE_PARAM_KEYS = {"w", "lam", "delta", "sigma_lo", "sigma_hi"}
_SCHEDULE_KEYS = {"sigma_min", "sigma_max", "levels", "rho"}
_SAMPLER_KEYS = {
    "ode": {"algorithm", "chains", "method", "schedule", "record_trajectories"},
    "cfgig": {
        "algorithm",
        "chains",
        "method",
        "schedule",
        "w0",
        "repetitions",
        "total_steps",
        "initial_steps",
        "sigma_star",
    },
    "smc": {"algorithm", "particles", "schedule", "resample_threshold"},
}


def _require(node: dict, key: str, where: str):
    if key not in node:
        raise ConfigError(f"{where}: missing '{key}'")
    return node[key]


def _check_keys(node: dict, allowed: set, where: str):
    unknown = set(node) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _positive(value, where: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number") from None
    if not (np.isfinite(v) and v > 0.0):
        raise ConfigError(f"{where}: must be positive and finite")
    return v


def _positive_int(value, where: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{where}: expected a positive integer")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description."""

    raw: dict
    seed: int
    target: AnalyticTarget
    context: object
    guidance_kind: str
    guidance_params: dict
    algorithm: str
    sampler: dict
    schedule: Optional[NoiseSchedule]
    cfgig: Optional[CfgigConfig]
    metric_names: tuple
    reference_size: int
    reference_w: Optional[float]
    record_trajectories: bool = field(default=False)

    @classmethod
    def from_dict(cls, node: dict) -> "ExperimentConfig":
        if not isinstance(node, dict):
            raise ConfigError("config root must be an object")
        _check_keys(
            node,
            {"schema_version", "seed", "target", "context", "guidance", "sampler", "metrics"},
            "config",
        )
        version = _require(node, "schema_version", "config")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config: unsupported schema_version {version!r}")

        seed = node.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("config.seed: expected a non-negative integer")

        target = cls._parse_target(_require(node, "target", "config"))
        context = _require(node, "context", "config")

        gnode = _require(node, "guidance", "config")
        if not isinstance(gnode, dict):
            raise ConfigError("config.guidance must be an object")
        _check_keys(gnode, {"kind"} | _GUIDANCE_PARAM_KEYS, "config.guidance")
        kind = _require(gnode, "kind", "config.guidance")
        if kind not in STRATEGIES:
            raise ConfigError(f"config.guidance.kind: unknown strategy '{kind}'")
        gparams = {k: float(v) for k, v in gnode.items() if k != "kind"}
        try:
            make_guided(kind, target, context, **gparams)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"config.guidance: {exc}") from exc

        snode = _require(node, "sampler", "config")
        if not isinstance(snode, dict):
            raise ConfigError("config.sampler must be an object")
        algorithm = _require(snode, "algorithm", "config.sampler")
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"config.sampler.algorithm: unknown algorithm '{algorithm}'")
        _check_keys(snode, _SAMPLER_KEYS[algorithm], "config.sampler")

        sched_node = _require(snode, "schedule", "config.sampler")
        if not isinstance(sched_node, dict):
            raise ConfigError("config.sampler.schedule must be an object")
        _check_keys(sched_node, _SCHEDULE_KEYS, "config.sampler.schedule")
        sigma_min = _positive(_require(sched_node, "sigma_min", "config.sampler.schedule"),
                              "config.sampler.schedule.sigma_min")
        sigma_max = _positive(_require(sched_node, "sigma_max", "config.sampler.schedule"),
                              "config.sampler.schedule.sigma_max")
        rho = _positive(sched_node.get("rho", 7.0), "config.sampler.schedule.rho")

        schedule = None
        cfgig_cfg = None
        record = False
        if algorithm in ("ode", "smc"):
            levels = _positive_int(
                _require(sched_node, "levels", "config.sampler.schedule"),
                "config.sampler.schedule.levels",
            )
            try:
                schedule = karras_sigmas(sigma_min, sigma_max, levels, rho)
            except ConfigError as exc:
                raise ConfigError(f"config.sampler.schedule: {exc}") from exc
        if algorithm == "ode":
            _positive_int(_require(snode, "chains", "config.sampler"), "config.sampler.chains")
            record = bool(snode.get("record_trajectories", False))
        elif algorithm == "cfgig":
            if kind == "cfg++":
                raise ConfigError("config: the refinement sampler needs a weight-based strategy")
            for key in ("w0", "repetitions", "total_steps", "initial_steps", "sigma_star"):
                _require(snode, key, "config.sampler")
            _positive_int(_require(snode, "chains", "config.sampler"), "config.sampler.chains")
            try:
                cfgig_cfg = CfgigConfig(
                    w0=float(snode["w0"]),
                    w=float(gparams.get("w", 0.0)),
                    repetitions=_positive_int(snode["repetitions"], "config.sampler.repetitions"),
                    total_steps=_positive_int(snode["total_steps"], "config.sampler.total_steps"),
                    initial_steps=_positive_int(snode["initial_steps"], "config.sampler.initial_steps"),
                    sigma_star=_positive(snode["sigma_star"], "config.sampler.sigma_star"),
                    sigma_min=sigma_min,
                    sigma_max=sigma_max,
                    rho=rho,
                    method=snode.get("method", "euler"),
                )
            except ConfigError as exc:
                raise ConfigError(f"config.sampler: {exc}") from exc
        else:
            _positive_int(_require(snode, "particles", "config.sampler"), "config.sampler.particles")
            thr = snode.get("resample_threshold", 0.5)
            if not (isinstance(thr, (int, float)) and 0.0 <= float(thr) <= 1.0):
                raise ConfigError("config.sampler.resample_threshold: must lie in [0, 1]")
        if algorithm in ("ode", "cfgig"):
            method = snode.get("method", "euler")
            if method not in ("euler", "heun"):
                raise ConfigError("config.sampler.method: must be 'euler' or 'heun'")

        mnode = node.get("metrics", {})
        if not isinstance(mnode, dict):
            raise ConfigError("config.metrics must be an object")
        _check_keys(mnode, {"compute", "reference_size", "reference_w"}, "config.metrics")
        names = tuple(mnode.get("compute", ("moments",)))
        for name in names:
            if name not in METRIC_NAMES:
                raise ConfigError(f"config.metrics.compute: unknown metric '{name}'")
        ref_size = mnode.get("reference_size", 10000)
        _positive_int(ref_size, "config.metrics.reference_size")
        ref_w = mnode.get("reference_w")
        if ref_w is not None:
            ref_w = float(ref_w)
            if ref_w < 0.0:
                raise ConfigError("config.metrics.reference_w: must be >= 0")

        # context shape check against the classifier
        try:
            from .targets import conditional_gmm

            conditional_gmm(target, np.asarray(context, dtype=float)
                            if not isinstance(context, int) else context)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"config.context: {exc}") from exc

        return cls(
            raw=copy.deepcopy(node),
            seed=seed,
            target=target,
            context=context,
            guidance_kind=kind,
            guidance_params=gparams,
            algorithm=algorithm,
            sampler=dict(snode),
            schedule=schedule,
            cfgig=cfgig_cfg,
            metric_names=names,
            reference_size=ref_size,
            reference_w=ref_w,
            record_trajectories=record,
        )

    @staticmethod
    def _parse_target(node) -> AnalyticTarget:
        if not isinstance(node, dict):
            raise ConfigError("config.target must be an object")
        if "preset" in node:
            preset = node["preset"]
            if preset == "canonical_bimodal":
                _check_keys(node, {"preset"}, "config.target")
                return canonical_bimodal_target()
            if preset == "standard_gaussian":
                _check_keys(node, {"preset", "gamma"}, "config.target")
                return standard_gaussian_target(float(node.get("gamma", 1.0)))
            raise ConfigError(f"config.target.preset: unknown preset '{preset}'")
        return target_from_config(node)

    def effective_reference_w(self) -> float:
        if self.reference_w is not None:
            return self.reference_w
        if self.guidance_kind == "uncond":
            return 0.0
        return float(self.guidance_params.get("w", 1.0))


def load_config_file(path: str) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            node = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(node)
