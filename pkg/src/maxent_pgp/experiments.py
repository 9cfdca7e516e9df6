"""Experiment harness: build environments from configs, run cells and sweeps, write artifacts.

Artifacts per run directory:
  log.csv       iteration log (byte-identical for a fixed seed)
  summary.json  final metrics plus the full resolved config and seed
  policy.json   final policy parameters
  timing.json   wall-clock time, kept apart so the other files stay reproducible
"""
from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import PdpgConfig, pdpg_run, unconstrained_me_run
from .config import ExperimentConfig
from .errors import ConfigError
from .gridworld import DEFAULT_MAP, GridworldSpec, build_frozenlake, reference_trajectory_policy
from .ipppm import IpppmConfig, composed_modulus, ipppm_run, synthetic_problem
from .objectives import KLRefConstraint, NormRefConstraint, constraint_scale
from .pgp import PenaltyConfig, PgpRunConfig, dual_beta, pgp_run
from .policy import uniform_policy

SWEEP_AXES = {"beta": "pgp.beta", "batch": "pgp.batch", "step_size": "pgp.step_size", "b": "constraint.b"}


def gridworld_spec(cfg: ExperimentConfig) -> GridworldSpec:
    env = cfg["environment"]
    if env["kind"] != "frozenlake":
        raise ConfigError(f"environment.kind: unsupported environment '{env['kind']}'")
    return GridworldSpec(tuple(env["map"]) if env["map"] else DEFAULT_MAP, env["slip_prob"],
                         env["cost_profile"], env["discount"])


def build_environment(cfg: ExperimentConfig):
    """Return (mdp, constraint spec or None, gridworld spec)."""
    gspec = gridworld_spec(cfg)
    mdp, linear = build_frozenlake(gspec)
    con = cfg["constraint"]
    kind = con["kind"]
    if kind == "none":
        return mdp, None, gspec
    if kind == "linear":
        return mdp, linear, gspec
    _, lam_ref = reference_trajectory_policy(gspec, con["reference_epsilon"])
    if kind == "kl_ref":
        return mdp, KLRefConstraint(lam_ref.values, con["r_max"], cfg["pgp"]["floor"]), gspec
    return mdp, NormRefConstraint(lam_ref.values, con["b"]), gspec


def pgp_config(cfg: ExperimentConfig, seed: int) -> PgpRunConfig:
    p = cfg["pgp"]
    return PgpRunConfig(p["iterations"], p["step_size"], p["batch"], p["horizon"],
                        PenaltyConfig(p["beta"], p["penalty"]), seed=seed, eval_every=p["eval_every"],
                        floor=p["floor"], split_ratio=p["split_ratio"])


def pdpg_config(cfg: ExperimentConfig, seed: int) -> PdpgConfig:
    p, d = cfg["pgp"], cfg["pdpg"]
    return PdpgConfig(d["primal_lr"], d["dual_lr"], p["iterations"], p["batch"], p["horizon"],
                      momentum=d["momentum"], seed=seed, eval_every=p["eval_every"], floor=p["floor"],
                      split_ratio=p["split_ratio"])


@dataclass
class CellResult:
    config: ExperimentConfig
    seed: int
    log_csv: str
    summary: dict
    policy_json: str | None
    seconds: float


def _ipppm_cell(cfg: ExperimentConfig, seed: int) -> CellResult:
    q = cfg["ipppm"]
    problem = synthetic_problem(q["u0"], q["a"], q["b"], q["weights"], q["box"])
    nu = problem.known_opt.nu_star
    if q["beta"] is not None:
        beta = q["beta"]
    elif q["penalty"] == "exact":
        beta = 2 * nu + 2
    else:
        beta = dual_beta(q["epsilon"], nu)
    penalty = PenaltyConfig(beta, q["penalty"])
    rho_phi, _, _ = composed_modulus(problem, penalty)
    eps_in = q["eps_in"] if q["eps_in"] is not None else 1e-10
    run_cfg = IpppmConfig(q["outer"], eps_in, 2 * rho_phi, penalty, q["inner"], q["inner_cap"], q["stop_gap"])
    start = time.perf_counter()
    theta, record = ipppm_run(problem, run_cfg, np.asarray(q["theta0"], dtype=float))
    seconds = time.perf_counter() - start
    final = record.rows[-1]
    summary = {
        "algorithm": "ipppm", "seed": seed, "beta": beta, "rho_hat": run_cfg.rho_hat,
        "F_star": problem.known_opt.F_star, "nu_star": nu,
        "final": {k: float(v) for k, v in final.items()}, "inexact_outer_steps": len(record.flags),
        "theta": theta.tolist(),
    }
    return CellResult(cfg, seed, record.to_csv(), summary, None, seconds)


def run_cell(cfg: ExperimentConfig, seed: int | None = None) -> CellResult:
    """Run one configuration with one seed."""
    seed = cfg.seed if seed is None else seed
    if cfg.algorithm == "ipppm":
        return _ipppm_cell(cfg, seed)
    mdp, spec, _ = build_environment(cfg)
    policy0 = uniform_policy(mdp.n_states, mdp.n_actions, cfg["pgp"]["box_radius"])
    start = time.perf_counter()
    extra = {}
    if cfg.algorithm == "pgp":
        policy, record = pgp_run(mdp, policy0, spec, pgp_config(cfg, seed))
    elif cfg.algorithm == "unconstrained":
        policy, record = unconstrained_me_run(mdp, policy0, pgp_config(cfg, seed), monitor=spec)
    else:
        if spec is None:
            raise ConfigError("constraint.kind: the primal-dual baseline needs a constraint")
        policy, nu_trace, record = pdpg_run(mdp, policy0, spec, pdpg_config(cfg, seed))
        extra["final_nu"] = float(nu_trace[-1])
    seconds = time.perf_counter() - start
    final = {k: float(v) for k, v in record.final.items() if k != "wall_ms"}
    summary = {"algorithm": cfg.algorithm, "seed": seed, "final": final,
               "constraint_scale": constraint_scale(spec) if spec is not None else 1.0, **extra}
    return CellResult(cfg, seed, record.to_csv(), summary, policy.to_json(), seconds)


def write_artifacts(result: CellResult, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "log.csv").write_text(result.log_csv)
    summary = dict(result.summary, config=result.config.data, master_seed=result.seed)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out_dir / "config.yaml").write_text(result.config.to_yaml())
    if result.policy_json is not None:
        (out_dir / "policy.json").write_text(result.policy_json + "\n")
    (out_dir / "timing.json").write_text(json.dumps({"seconds": result.seconds}) + "\n")
    return out_dir


def sweep_cells(cfg: ExperimentConfig) -> list[dict]:
    """Grid of dotted-key assignments, one per combination of the sweep axes."""
    axes = [(dotted, cfg["sweep"][axis]) for axis, dotted in SWEEP_AXES.items()
            if cfg["sweep"][axis] is not None]
    return [dict(zip([k for k, _ in axes], combo)) for combo in itertools.product(*[v for _, v in axes])]


def _cell_label(values: dict) -> str:
    return "_".join(f"{k.split('.')[-1]}={v}" for k, v in values.items()) or "base"


def _run_job(job):
    data, seed = job
    return run_cell(ExperimentConfig(data), seed)


def ablate(cfg: ExperimentConfig, out_dir: Path | None = None, workers: int | None = None) -> list[dict]:
    """Run the full sweep grid over the configured seeds; rows carry mean and std per cell.

    Any failing cell aborts the sweep.
    """
    cells = sweep_cells(cfg)
    seeds = cfg.seeds()
    jobs = [(cfg.with_values(values).data, seed) for values in cells for seed in seeds]
    workers = cfg["workers"] if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]
    rows = []
    for i, values in enumerate(cells):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        if len(chunk) != len(seeds):
            raise RuntimeError(f"sweep cell {_cell_label(values)} is missing seeds")
        row = {k.split(".")[-1]: v for k, v in values.items()}
        row["n_seeds"] = len(chunk)
        for metric in ("entropy", "constraint", "violation"):
            vals = np.array([r.summary["final"][metric] for r in chunk])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_std"] = float(vals.std())
        rows.append(row)
        if out_dir is not None:
            for r in chunk:
                write_artifacts(r, Path(out_dir) / _cell_label(values) / f"seed={r.seed}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = list(rows[0])
        lines = [",".join(cols)] + [",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                             for c in cols) for r in rows]
        (out / "ablation.csv").write_text("\n".join(lines) + "\n")
        (out / "ablation.json").write_text(json.dumps({"config": cfg.data, "seeds": seeds, "cells": rows},
                                                      indent=2, sort_keys=True) + "\n")
    return rows
