"""Command line entry point: run, ablate, check-gradients, solve-oracle, policy-table."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from .checks import gradient_check_suite
from .config import load_config
from .errors import ConfigError, DomainError
from .experiments import ablate, build_environment, run_cell, write_artifacts
from .gridworld import parse_map
from .mdp import exact_state_occupancy
from .oracle import solve_constrained_optimum
from .policy import SoftmaxPolicy, greedy_actions

ACTION_GLYPHS = "^v<>"


def _common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted key override, e.g. pgp.beta=0.01 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxent-pgp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one configuration and write its artifacts"))
    p = sub.add_parser("ablate", help="run the sweep grid over all configured seeds")
    _common(p)
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p = sub.add_parser("check-gradients", help="finite-difference check of the analytic gradients")
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p = sub.add_parser("solve-oracle", help="certify the constrained entropy optimum")
    _common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p = sub.add_parser("policy-table", help="greedy action and occupancy grids of a saved policy")
    _common(p)
    p.add_argument("--policy", required=True, help="policy.json written by 'run'")
    return parser


def _out_dir(args, default: str) -> Path:
    return Path(args.out if args.out else default)


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.override, args.seed)
    result = run_cell(cfg)
    out = write_artifacts(result, _out_dir(args, cfg["output"]))
    print(json.dumps(result.summary["final"], sort_keys=True))
    print(f"artifacts written to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.override, args.seed)
    rows = ablate(cfg, _out_dir(args, cfg["output"]), args.workers)
    for row in rows:
        print(", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


def cmd_check_gradients(args) -> int:
    report = gradient_check_suite(args.points, args.seed, args.tolerance)
    for name, err in report.worst().items():
        status = "ok" if err <= args.tolerance else "FAIL"
        print(f"{status:4s} {name}: max relative error {err:.3e}")
    return 0 if report.passed else 1


def cmd_solve_oracle(args) -> int:
    cfg = load_config(args.config, args.override, args.seed)
    mdp, spec, _ = build_environment(cfg)
    cert = solve_constrained_optimum(mdp, spec, tolerance=args.tolerance, floor=cfg["pgp"]["floor"])
    out = _out_dir(args, cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "certificate.json").write_text(cert.to_json() + "\n")
    print(f"F* = {cert.F_star:.8f}  nu* = {cert.nu_star:.6g}  gap = {cert.duality_gap:.2e}  "
          f"usable = {cert.usable}")
    return 0 if cert.usable else 2


def policy_tables(cfg, policy: SoftmaxPolicy) -> tuple[str, str]:
    """Comma-separated grids: greedy action glyphs and exact state occupancy."""
    mdp, _, gspec = build_environment(cfg)
    grid = parse_map(gspec.ascii_map)
    if policy.n_states != mdp.n_states or policy.n_actions != mdp.n_actions:
        raise ConfigError(f"policy is {policy.n_states}x{policy.n_actions}, "
                          f"environment is {mdp.n_states}x{mdp.n_actions}")
    acts = greedy_actions(policy)
    occ = exact_state_occupancy(mdp, policy.probs())
    action_rows, occ_rows = [], []
    for r in range(grid.n_rows):
        glyphs, masses = [], []
        for c in range(grid.n_cols):
            s = r * grid.n_cols + c
            if s in grid.holes:
                glyphs.append("H")
            elif s in grid.terminals:
                glyphs.append("G")
            else:
                glyphs.append(ACTION_GLYPHS[acts[s]])
            masses.append(repr(float(occ[s])))
        action_rows.append(",".join(glyphs))
        occ_rows.append(",".join(masses))
    return "\n".join(action_rows) + "\n", "\n".join(occ_rows) + "\n"


def cmd_policy_table(args) -> int:
    cfg = load_config(args.config, args.override, args.seed)
    policy = SoftmaxPolicy.from_json(Path(args.policy).read_text())
    actions, occupancy = policy_tables(cfg, policy)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "greedy_actions.csv").write_text(actions)
        (out / "state_occupancy.csv").write_text(occupancy)
    print(actions + "\n" + occupancy, end="")
    return 0


COMMANDS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "check-gradients": cmd_check_gradients,
    "solve-oracle": cmd_solve_oracle,
    "policy-table": cmd_policy_table,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
