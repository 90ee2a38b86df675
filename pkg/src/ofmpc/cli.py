"""Command-line interface: run scenarios, verify terminal ingredients,
check steady-state rank conditions, and batch sweeps.

Exit codes: 0 success, 1 solver/verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import simulator as sim
from .linear_analysis import check_M1, check_M2, linearize
from .models import TargetParams, get_benchmark
from .sstp import TargetSolver
from .terminal import default_terminal_config, verify_terminal

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2


def _load_scenario(spec: str) -> sim.Scenario:
    """A scenario argument is a JSON file path or a built-in scenario name."""
    if os.path.exists(spec):
        with open(spec) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise sim.ScenarioError(f"{spec}: invalid JSON ({exc})") from exc
        return sim.Scenario.from_json(data)
    if spec.endswith(".json"):
        raise sim.ScenarioError(f"scenario file not found: {spec}")
    return sim.builtin_scenario(spec)


def _run_one(spec: str, out_dir: str, skip_mismatch: bool = False) -> int:
    scenario = _load_scenario(spec)
    os.makedirs(out_dir, exist_ok=True)
    result = sim.run_closed_loop(scenario, cache_dir=out_dir)
    if not skip_mismatch:
        result = sim.compute_mismatch_noise(result)
    sim.write_trajectory_csv(result, os.path.join(out_dir, "trajectory.csv"))
    sim.write_summary_json(result, os.path.join(out_dir, "summary.json"))
    if result.failure is not None:
        print(
            f"{scenario.name}: FAILED at step {result.failure['step']} "
            f"({result.failure['error']}: {result.failure['message']}); "
            f"partial logs written to {out_dir}"
        )
        return EXIT_SOLVER
    off = sim.final_window_offset(result)
    print(f"{scenario.name}: {result.steps} steps, final-window max|delta_r| = {off:.3e}")
    return EXIT_OK


def _sweep_worker(args) -> int:
    spec, out_root, skip_mismatch = args
    name = os.path.splitext(os.path.basename(spec))[0]
    return _run_one(spec, os.path.join(out_root, name), skip_mismatch)


def _cmd_run(args) -> int:
    return _run_one(args.scenario, args.out, args.skip_mismatch)


def _cmd_sweep(args) -> int:
    jobs = [(spec, args.out, args.skip_mismatch) for spec in args.scenarios]
    # validate configs up front so a bad file is a config error, not a
    # half-finished sweep
    for spec, _, _ in jobs:
        _load_scenario(spec)
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            codes = list(pool.map(_sweep_worker, jobs))
    else:
        codes = [_sweep_worker(job) for job in jobs]
    return max(codes) if codes else EXIT_OK


def _cmd_list(args) -> int:
    for name in sim.list_builtin_scenarios():
        print(name)
    return EXIT_OK


def _cmd_verify_terminal(args) -> int:
    design = sim.get_terminal_design(args.model)
    report = verify_terminal(design, n_samples=args.samples, seed=args.seed)
    print(f"model: {args.model}")
    print(f"c_x = {design.c_x!r}")
    print(f"c_f = {design.c_f!r}")
    print(f"samples: {report.samples}")
    print(f"decrease violations: {report.decrease_violations} (worst {report.worst_decrease:.3e})")
    print(
        f"invariance violations: {report.invariance_violations}"
        f" (worst {report.worst_invariance:.3e})"
    )
    print(f"max input-bound excess of the terminal law: {report.max_input_excess:.3e}")
    return EXIT_OK if report.ok else EXIT_SOLVER


def _cmd_rank_check(args) -> int:
    model, _ = get_benchmark(args.model)
    if args.model == "cstr":
        target = TargetSolver(model)(TargetParams.of(0.65))
        at = (target.x_s, target.u_s, np.zeros(model.n_d))
    else:
        at = None
    lin = linearize(model, at=at)
    r1 = check_M1(lin)
    r2 = check_M2(lin)
    print(f"M1 full row rank: {str(r1.full_rank).lower()} (sigma_min {r1.sigma_min:.3e})")
    print(f"M2 invertible: {str(r2.full_rank).lower()} (sigma_min {r2.sigma_min:.3e})")
    return EXIT_OK if (r1.full_rank and r2.full_rank) else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ofmpc",
        description="Offset-free nonlinear MPC benchmarks: closed-loop runs and diagnostics.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("run", help="run one scenario (JSON file or built-in name)")
    p.add_argument("scenario")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--skip-mismatch", action="store_true",
                   help="skip the steady-state mismatch/noise reconstruction")
    p.set_defaults(func=_cmd_run)

    p = subs.add_parser("sweep", help="run a batch of scenarios")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--out", default="out", help="output root directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--skip-mismatch", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = subs.add_parser("list-scenarios", help="list built-in scenarios")
    p.set_defaults(func=_cmd_list)

    p = subs.add_parser("verify-terminal", help="sample-check the terminal region certificate")
    p.add_argument("model", choices=("pendulum", "cstr"))
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify_terminal)

    p = subs.add_parser("rank-check", help="steady-state reachability/observability ranks")
    p.add_argument("model", choices=("pendulum", "cstr"))
    p.set_defaults(func=_cmd_rank_check)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 on --help; pass both through
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (sim.ScenarioError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
