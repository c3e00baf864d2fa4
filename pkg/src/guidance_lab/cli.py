"""Command line interface: seeded experiment runs that emit CSV/JSON artifacts.

Subcommands
-----------
run              one experiment from a JSON config
sweep            rerun a config while varying one named parameter
gaussian-theory  closed-form contraction/variance tables for the scalar case
figure2          canonical bimodal comparison: guided flow vs ideal flow

Every artifact directory gets a manifest.json recording the exact resolved
config, seed, and library versions, so any artifact can be reproduced from
its manifest alone.  Exit codes: 0 success, 2 config error, 3 numerical
failure, 4 I/O error.  Set GUIDANCE_LAB_LOG to DEBUG/INFO/... for logging.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np
import scipy

from . import __version__
from .cfgig import cfgig_sample, smc_sample
from .config import ExperimentConfig, load_config_file
from .errors import ConfigError, GuidanceLabError, NumericalError
from .gaussian_theory import (
    flow_contraction,
    refinement_variance,
    stationary_variance,
    tilted_moments,
    variance_upper_bound,
)
from .guidance import make_guided
from .metrics import ks_statistic, moments, prdc, wasserstein2_1d
from .solvers import ode_ensemble
from .targets import canonical_bimodal_target, sample_reference

log = logging.getLogger(__name__)

_REFERENCE_SEED_OFFSET = 1_000_000_007

# name -> (path into the raw config dict, python type)
SWEEP_PARAMS = {
    "w": (("guidance", "w"), float),
    "lam": (("guidance", "lam"), float),
    "delta": (("guidance", "delta"), float),
    "w0": (("sampler", "w0"), float),
    "sigma_star": (("sampler", "sigma_star"), float),
    "repetitions": (("sampler", "repetitions"), int),
    "total_steps": (("sampler", "total_steps"), int),
    "initial_steps": (("sampler", "initial_steps"), int),
    "levels": (("sampler", "schedule", "levels"), int),
    "chains": (("sampler", "chains"), int),
    "particles": (("sampler", "particles"), int),
    "context": (("context",), float),
    "seed": (("seed",), int),
}


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_samples(path: str, samples: np.ndarray, log_weights=None) -> None:
    d = samples.shape[1]
    header = ["chain_id"] + [f"x{i + 1}" for i in range(d)]
    if log_weights is not None:
        header.append("log_weight")
    rows = []
    for j in range(samples.shape[0]):
        row = [str(j)] + [_fmt(v) for v in samples[j]]
        if log_weights is not None:
            row.append(_fmt(log_weights[j]))
        rows.append(row)
    _write_csv(path, header, rows)


def _write_trajectories(path: str, sigmas: np.ndarray, traj: np.ndarray) -> None:
    # traj has shape (states, chains, d)
    d = traj.shape[2]
    header = ["chain_id", "step_index", "sigma"] + [f"x{i + 1}" for i in range(d)]
    rows = []
    for j in range(traj.shape[1]):
        for s in range(traj.shape[0]):
            rows.append([str(j), str(s), _fmt(sigmas[s])] + [_fmt(v) for v in traj[s, j]])
    _write_csv(path, header, rows)


def _write_metrics(path: str, metric_map: dict) -> None:
    payload = {name: float(value) for name, value in metric_map.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir: str, entries: dict) -> None:
    payload = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        **entries,
    }
    if "config" in payload:
        canonical = json.dumps(payload["config"], sort_keys=True).encode()
        payload["config_sha256"] = hashlib.sha256(canonical).hexdigest()
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _reference_points(exp: ExperimentConfig, seed: int) -> np.ndarray:
    ref_w = exp.effective_reference_w()
    ref_seed = seed + _REFERENCE_SEED_OFFSET
    if ref_w == 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(ref_seed))
        return exp.target.prior.sample(exp.reference_size, rng)
    ref = sample_reference(exp.target, exp.context, ref_w, exp.reference_size, ref_seed)
    if ref.low_ess:
        log.warning("reference sample ESS is low: %.1f of %d", ref.ess, exp.reference_size)
    return ref.points


def _compute_metrics(exp: ExperimentConfig, samples: np.ndarray, seed: int) -> dict:
    out: dict = {}
    d = samples.shape[1]
    names = exp.metric_names
    reference = None
    if any(n in names for n in ("w2", "ks", "prdc")):
        reference = _reference_points(exp, seed)
    for name in names:
        if name == "moments":
            for i in range(d):
                m = moments(samples[:, i])
                suffix = "" if d == 1 else f"_x{i + 1}"
                out[f"mean{suffix}"] = m[0]
                out[f"variance{suffix}"] = m[1]
                out[f"central3{suffix}"] = m[2]
                out[f"central4{suffix}"] = m[3]
        elif name == "w2":
            for i in range(d):
                suffix = "" if d == 1 else f"_x{i + 1}"
                out[f"w2_vs_reference{suffix}"] = wasserstein2_1d(samples[:, i], reference[:, i])
        elif name == "ks":
            for i in range(d):
                suffix = "" if d == 1 else f"_x{i + 1}"
                out[f"ks_vs_reference{suffix}"] = ks_statistic(samples[:, i], reference[:, i])
        elif name == "prdc":
            res = prdc(reference, samples, k=3)
            out.update(res.as_dict())
    return out


def _execute(exp: ExperimentConfig, seed: int, threads: int, out_dir: str) -> dict:
    """Run one experiment and write its artifacts; returns the metric map."""
    os.makedirs(out_dir, exist_ok=True)
    guided = make_guided(exp.guidance_kind, exp.target, exp.context, **exp.guidance_params)
    log_weights = None
    traj = None
    sigmas = None
    iterates = None
    extra: dict = {}
    if exp.algorithm == "ode":
        res = ode_ensemble(
            guided,
            exp.schedule,
            dim=exp.target.dim,
            chains=exp.sampler["chains"],
            seed=seed,
            method=exp.sampler.get("method", "euler"),
            threads=threads,
            record_trajectory=exp.record_trajectories,
        )
        samples = res.samples
        traj, sigmas = res.trajectory, res.trajectory_sigmas
        extra["denoiser_calls"] = res.denoiser_calls
    elif exp.algorithm == "cfgig":
        res = cfgig_sample(
            exp.target,
            exp.context,
            exp.cfgig,
            chains=exp.sampler["chains"],
            seed=seed,
            threads=threads,
            record_iterates=True,
            strategy=exp.guidance_kind,
            strategy_params={k: v for k, v in exp.guidance_params.items() if k != "w"},
        )
        samples = res.samples
        iterates = res.iterates
        extra["denoiser_calls"] = res.denoiser_calls
        for i, steps in enumerate(res.steps_per_stage):
            extra[f"steps_stage{i}"] = steps
    else:
        res = smc_sample(
            exp.target,
            exp.context,
            float(exp.guidance_params.get("w", 1.0)),
            particles=exp.sampler["particles"],
            schedule=exp.schedule,
            seed=seed,
            resample_threshold=float(exp.sampler.get("resample_threshold", 0.5)),
        )
        samples = res.draws
        log_weights = res.log_weights
        smc_res = res
        extra["ess_final"] = res.ess_trace[-1]
        extra["resample_count"] = res.resample_count
        extra["weighted_mean"] = res.weighted_mean()[0]
        extra["weighted_variance"] = res.weighted_variance()[0]

    metric_map = _compute_metrics(exp, samples, seed)
    metric_map.update(extra)

    outputs = ["samples.csv", "metrics.json"]
    if exp.algorithm == "smc":
        # samples.csv holds the unweighted resampled draws; the weighted
        # ensemble and the per-transition ESS trace go to separate files.
        _write_samples(os.path.join(out_dir, "samples.csv"), samples)
        _write_samples(
            os.path.join(out_dir, "particles.csv"), smc_res.particles, log_weights
        )
        trans = list(exp.schedule.transitions())
        _write_csv(
            os.path.join(out_dir, "ess_trace.csv"),
            ["step_index", "sigma_from", "sigma_to", "ess"],
            [
                [str(i), _fmt(sf), _fmt(st), _fmt(e)]
                for i, ((sf, st), e) in enumerate(zip(trans, smc_res.ess_trace))
            ],
        )
        outputs.extend(["particles.csv", "ess_trace.csv"])
    else:
        _write_samples(os.path.join(out_dir, "samples.csv"), samples)
    if exp.algorithm == "cfgig" and iterates is not None:
        _write_csv(
            os.path.join(out_dir, "iterates.csv"),
            ["chain_id", "iteration"] + [f"x{i + 1}" for i in range(iterates.shape[2])],
            [
                [str(j), str(r)] + [_fmt(v) for v in iterates[r, j]]
                for j in range(iterates.shape[1])
                for r in range(iterates.shape[0])
            ],
        )
        outputs.append("iterates.csv")
    if traj is not None:
        _write_trajectories(os.path.join(out_dir, "trajectories.csv"), sigmas, traj)
        outputs.append("trajectories.csv")
    _write_metrics(os.path.join(out_dir, "metrics.json"), metric_map)
    _write_manifest(
        out_dir,
        {
            "kind": "run",
            "config": exp.raw,
            "seed": seed,
            "threads": threads,
            "outputs": sorted(outputs),
        },
    )
    return metric_map


def _cmd_run(args) -> int:
    exp = load_config_file(args.config)
    seed = exp.seed if args.seed is None else args.seed
    metric_map = _execute(exp, seed, args.threads, args.out_dir)
    summary = ", ".join(f"{k}={_fmt(v)}" for k, v in list(metric_map.items())[:4])
    print(f"run complete: {args.out_dir} ({summary})")
    return 0


def _set_path(node: dict, path: tuple, value) -> None:
    cur = node
    for key in path[:-1]:
        if key not in cur or not isinstance(cur[key], dict):
            cur[key] = {}
        cur = cur[key]
    cur[path[-1]] = value


def _cmd_sweep(args) -> int:
    exp = load_config_file(args.config)
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep parameter '{args.param}'; known: {sorted(SWEEP_PARAMS)}"
        )
    path, caster = SWEEP_PARAMS[args.param]
    try:
        values = [caster(json.loads(tok)) for tok in args.values.split(",") if tok.strip()]
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise ConfigError(f"could not parse sweep values '{args.values}': {exc}") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")

    os.makedirs(args.out_dir, exist_ok=True)
    results = []
    keys: list = []
    for value in values:
        raw = copy.deepcopy(exp.raw)
        _set_path(raw, path, value)
        sub = ExperimentConfig.from_dict(raw)
        seed = sub.seed if args.seed is None else args.seed
        sub_dir = os.path.join(args.out_dir, f"{args.param}={value:g}" if isinstance(value, float)
                               else f"{args.param}={value}")
        metric_map = _execute(sub, seed, args.threads, sub_dir)
        for k in metric_map:
            if k not in keys:
                keys.append(k)
        results.append((value, metric_map))
    rows = [
        [args.param, _fmt(value)] + [_fmt(mm[k]) if k in mm else "" for k in keys]
        for value, mm in results
    ]
    _write_csv(os.path.join(args.out_dir, "sweep.csv"), ["parameter", "value"] + keys, rows)
    _write_manifest(
        args.out_dir,
        {
            "kind": "sweep",
            "config": exp.raw,
            "parameter": args.param,
            "values": values,
            "seed": args.seed,
            "threads": args.threads,
            "outputs": ["sweep.csv"],
        },
    )
    print(f"sweep complete: {args.out_dir} ({len(values)} values of {args.param})")
    return 0


def _parse_float_list(text: str, where: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"{where}: could not parse '{text}'") from exc


def _cmd_gaussian_theory(args) -> int:
    ws = _parse_float_list(args.w, "--w")
    sigma_stars = _parse_float_list(args.sigma_star, "--sigma-star")
    reps = [int(r) for r in _parse_float_list(args.repetitions, "--repetitions")]
    if not ws or not sigma_stars or not reps:
        raise ConfigError("need at least one w, one sigma_star and one repetition count")
    if args.gamma <= 0 or min(ws) < 0:
        raise ConfigError("need gamma > 0 and w >= 0")
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for w in ws:
        _, v_tilt = tilted_moments(args.gamma, max(w, 1e-12), 0.0)
        for s in sigma_stars:
            cf = flow_contraction(args.gamma, w, s)
            if cf >= 1.0:
                raise NumericalError(f"flow is not contracting at sigma_star={s:g}")
            v_inf = stationary_variance(args.gamma, w, s)
            bound = variance_upper_bound(args.gamma, w, s)
            for r in reps:
                v_r = refinement_variance(args.gamma, w, s, r)
                rows.append(
                    [_fmt(args.gamma), _fmt(w), _fmt(s), str(r), _fmt(cf),
                     _fmt(v_tilt), _fmt(v_r), _fmt(v_inf), _fmt(bound),
                     _fmt(abs(v_r - v_tilt))]
                )
    _write_csv(
        os.path.join(args.out_dir, "gaussian_theory.csv"),
        ["gamma", "w", "sigma_star", "repetitions", "contraction", "tilted_variance",
         "refinement_variance", "stationary_variance", "variance_upper_bound",
         "abs_bias_vs_tilt"],
        rows,
    )
    _write_manifest(
        args.out_dir,
        {
            "kind": "gaussian-theory",
            "gamma": args.gamma,
            "w": ws,
            "sigma_star": sigma_stars,
            "repetitions": reps,
            "outputs": ["gaussian_theory.csv"],
        },
    )
    print(f"gaussian-theory table written: {args.out_dir}")
    return 0


FIGURE2_CONTEXT = 1.0
FIGURE2_W = 4.0
FIGURE2_LEVELS = 64


def _figure2_config(chains: int, kind: str, record: bool) -> dict:
    return {
        "schema_version": 1,
        "seed": 2024,
        "target": {"preset": "canonical_bimodal"},
        "context": FIGURE2_CONTEXT,
        "guidance": {"kind": kind, "w": FIGURE2_W},
        "sampler": {
            "algorithm": "ode",
            "chains": chains,
            "method": "euler",
            "record_trajectories": record,
            "schedule": {"sigma_min": 0.002, "sigma_max": 80.0, "levels": FIGURE2_LEVELS, "rho": 7.0},
        },
        "metrics": {"compute": ["moments", "w2", "ks"], "reference_size": 10000},
    }


def _cmd_figure2(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    combined: dict = {}
    for kind in ("cfg", "ideal"):
        exp = ExperimentConfig.from_dict(_figure2_config(args.chains, kind, record=True))
        seed = exp.seed if args.seed is None else args.seed
        guided = make_guided(exp.guidance_kind, exp.target, exp.context, **exp.guidance_params)
        res = ode_ensemble(
            guided,
            exp.schedule,
            dim=exp.target.dim,
            chains=args.chains,
            seed=seed,
            method="euler",
            threads=args.threads,
            record_trajectory=True,
        )
        _write_samples(os.path.join(args.out_dir, f"samples_{kind}.csv"), res.samples)
        _write_trajectories(
            os.path.join(args.out_dir, f"trajectories_{kind}.csv"),
            res.trajectory_sigmas,
            res.trajectory,
        )
        for name, value in _compute_metrics(exp, res.samples, seed).items():
            combined[f"{kind}_{name}"] = value
    _write_metrics(os.path.join(args.out_dir, "metrics.json"), combined)
    _write_manifest(
        args.out_dir,
        {
            "kind": "figure2",
            "config": _figure2_config(args.chains, "cfg", True),
            "seed": args.seed,
            "threads": args.threads,
            "outputs": [
                "metrics.json",
                "samples_cfg.csv",
                "samples_ideal.csv",
                "trajectories_cfg.csv",
                "trajectories_ideal.csv",
            ],
        },
    )
    print(f"figure2 artifacts written: {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for chain blocks")
    common.add_argument("--out-dir", default="out", help="artifact directory")

    parser = argparse.ArgumentParser(
        prog="guidance-lab",
        description="Guided diffusion sampling experiments on tractable targets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="run one experiment config")
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", parents=[common], help="vary one parameter of a config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, help=f"one of {sorted(SWEEP_PARAMS)}")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_gt = sub.add_parser(
        "gaussian-theory", parents=[common], help="closed-form variance/contraction table"
    )
    p_gt.add_argument("--gamma", type=float, default=1.0)
    p_gt.add_argument("--w", default="2.0", help="comma-separated guidance scales")
    p_gt.add_argument("--sigma-star", default="0.1,0.5,1.0", help="comma-separated levels")
    p_gt.add_argument("--repetitions", default="1,2,3,5", help="comma-separated counts")
    p_gt.set_defaults(func=_cmd_gaussian_theory)

    p_fig = sub.add_parser(
        "figure2", parents=[common], help="bimodal guided-vs-ideal comparison artifacts"
    )
    p_fig.add_argument("--chains", type=int, default=1000)
    p_fig.set_defaults(func=_cmd_figure2)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GUIDANCE_LAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except GuidanceLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
