"""
Command-line entry point.

    diffop-qpe [--config FILE] [--out DIR] [--seed N] [-v] COMMAND [options]

Commands: discretize, solve, estimate, scan, cost.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .cost import CostInputs, cost_report, particle_statement
from .experiments import ExperimentError, _clean, build_problem, emit_report, run_scan, step_eigensystem
from .operators import OperatorError
from .phase_estimation import run_phase_estimation
from .solvers import SolverError, eig_dense, eig_lowest_krylov
from .splitting import choose_tau, product_step, split_operator

log = logging.getLogger("diffop_qpe")


def _require_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("<cli>:0: --config: this command needs a configuration file")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.problem is None:
        raise ConfigError(f"{args.config}:1: problem: this command needs a 'problem' section")
    return cfg


def _print(obj) -> None:
    print(json.dumps(_clean(obj), indent=2, sort_keys=True))


def cmd_discretize(args) -> int:
    cfg = _require_config(args)
    op = build_problem(cfg.problem, args.N)
    info = op.summary()
    plan = split_operator(op)
    info["split"] = plan.summary()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{cfg.name}_N{args.N}.npz"
        sp.save_npz(path, op.matrix)
        info["matrix_file"] = str(path)
    _print(info)
    return 0


def cmd_solve(args) -> int:
    cfg = _require_config(args)
    op = build_problem(cfg.problem, args.N)
    if args.method == "dense":
        pairs = eig_dense(op)[: args.count]
        out = [{"f": p.index_f, "value": p.value, "residual": p.residual} for p in pairs]
    else:
        p = eig_lowest_krylov(op, args.f, args.mu)
        out = [{"f": p.index_f, "value": p.value, "residual": p.residual, "iterations": p.iterations,
                "op_count": p.op_count, "shift_used": p.shift_used}]
    _print({"N": args.N, "method": args.method, "eigenpairs": out})
    return 0


def cmd_estimate(args) -> int:
    cfg = _require_config(args)
    op = build_problem(cfg.problem, args.N)
    tau = args.tau if args.tau is not None else choose_tau(args.N, op.order_S, args.nu, args.tau_constant)
    plan = split_operator(op, args.nu, tau=tau)
    step = product_step(plan, tau)
    lam, vecs = step_eigensystem(step)
    mode = "sample" if args.samples else "exact"
    res = run_phase_estimation(op, plan, vecs[:, args.f], args.M, mode, samples=args.samples,
                               seed=cfg.seed, step=step)
    payload = res.to_dict()
    payload["lambda_pi"] = float(lam[args.f])
    payload["estimate"] = res.estimate()
    if not args.full:
        payload.pop("distribution")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.name}_estimate.json").write_text(
            json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
    _print(payload)
    return 0


def cmd_scan(args) -> int:
    configs = args.configs or ([args.config] if args.config else [])
    if not configs:
        raise ConfigError("<cli>:0: --config: scan needs at least one configuration file")
    failed = []
    for path in configs:
        cfg = load_config(path)
        if args.seed is not None:
            cfg.seed = args.seed
        log.info("running %s scan '%s'", cfg.kind, cfg.name)
        report = run_scan(cfg)
        out = args.out or cfg.output["dir"]
        for p in emit_report(report, out, cfg.output["formats"]):
            log.info("wrote %s", p)
        for c in report.checks:
            mark = "PASS" if c.passed else "FAIL"
            print(f"[{mark}] {cfg.name}: {c.name} {c.detail}".rstrip())
            if not c.passed:
                failed.append(f"{cfg.name}: {c.name}")
    if failed:
        print(f"{len(failed)} check(s) failed:", file=sys.stderr)
        for f in failed:
            print(f"  {f}", file=sys.stderr)
        return 1
    return 0


def cmd_cost(args) -> int:
    rows = []
    for N in args.N:
        for D in args.D:
            for S in args.S:
                for nu in args.nu:
                    rep = cost_report(CostInputs(N, D, S, nu, c=args.c, N0=args.N0,
                                                 coefficient_bits=args.bits, threshold_ancilla=args.threshold_ancilla))
                    rows.append(rep)
    header = f"{'N':>6} {'D':>3} {'S':>2} {'nu':>2} {'qubits':>7} {'aleph_Q':>14} {'aleph_C':>14} {'ratio':>12} adv"
    print(header)
    for r in rows:
        i = r.inputs
        ratio = r.ratio if isinstance(r.ratio, str) else f"{r.ratio:.4g}"
        gq = r.gates_quantum if isinstance(r.gates_quantum, str) else f"{r.gates_quantum:.4g}"
        gc = r.gates_classical if isinstance(r.gates_classical, str) else f"{r.gates_classical:.4g}"
        print(f"{i['N']:>6} {i['D']:>3} {i['S']:>2} {i['nu']:>2} {r.qubits_quantum:>7} {gq:>14} {gc:>14} "
              f"{ratio:>12} {'yes' if r.advantage else 'no'}")
    for S in args.S:
        for nu in args.nu:
            print(f"S={S} nu={nu}: {particle_statement(S, nu)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffop-qpe", description=__doc__.strip().splitlines()[0] if __doc__ else None)
    p.add_argument("--config", help="experiment/problem YAML file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("discretize", help="assemble the operator and print its structure")
    d.add_argument("--N", type=int, required=True)
    d.set_defaults(func=cmd_discretize)

    s = sub.add_parser("solve", help="classical eigen-solve")
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--method", choices=["dense", "krylov"], default="dense")
    s.add_argument("--count", type=int, default=4, help="eigenpairs to print (dense)")
    s.add_argument("--f", type=int, default=0)
    s.add_argument("--mu", type=float, default=0.0, help="shift (krylov)")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("estimate", help="phase estimation on an eigenvector of the product step")
    e.add_argument("--N", type=int, required=True)
    e.add_argument("--M", type=int, required=True)
    e.add_argument("--f", type=int, default=1)
    e.add_argument("--nu", type=int, choices=[2, 4], default=2)
    e.add_argument("--tau", type=float)
    e.add_argument("--tau-constant", type=float, default=1.0)
    e.add_argument("--samples", type=int, default=0)
    e.add_argument("--full", action="store_true", help="include the full bin distribution")
    e.set_defaults(func=cmd_estimate)

    sc = sub.add_parser("scan", help="run configured scans and write reports")
    sc.add_argument("configs", nargs="*", help="config files (default: --config)")
    sc.set_defaults(func=cmd_scan)

    c = sub.add_parser("cost", help="print cost-model tables")
    c.add_argument("--N", type=int, nargs="+", default=[16, 1024])
    c.add_argument("--D", type=int, nargs="+", default=[3, 6, 9])
    c.add_argument("--S", type=int, nargs="+", default=[1])
    c.add_argument("--nu", type=int, nargs="+", default=[2, 4])
    c.add_argument("--c", type=float, default=3.0)
    c.add_argument("--N0", type=int)
    c.add_argument("--bits", type=int, default=0, help="coefficient register width")
    c.add_argument("--threshold-ancilla", action="store_true")
    c.set_defaults(func=cmd_cost)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OperatorError, SolverError, ExperimentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
