"""Configuration parsing and experiment orchestration for the fracwave CLI.

Usage: ``fracwave <command> --config <file> [--strict] [--out <dir>]``.
Commands: solve, temporal-study, spatial-study, compare-backends,
coeff-check, soe-check.  Exit codes: 0 success, 1 config error, 2
coefficient-validation failure under --strict.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import ConvergenceReport, fit_exponent, format_csv_rows, scaling_report
from .coefficients import (CoefficientEngine, CoefficientValidationError,
                           MultiTermOrders)
from .problems import custom_problem, manufactured_problem
from .scheme import run_solver
from .soe import build_soe, soe_error_scan

__all__ = ["ExperimentConfig", "ConfigError", "parse_config", "run_config", "main"]

_COMMANDS = ("solve", "temporal-study", "spatial-study", "compare-backends",
             "coeff-check", "soe-check")
_EPS_RULES = ("table1", "tau4")  # plus "fixed:<value>"
_BACKENDS = ("fast", "direct", "both")
_TOP_KEYS = {"command", "problem", "orders", "grid", "eps_rule", "backend",
             "strict_validation", "output", "t_final"}


class ConfigError(ValueError):
    """Malformed experiment configuration; message names the field."""


@dataclass
class ExperimentConfig:
    command: str
    orders: MultiTermOrders
    problem_case: int | None = None
    problem_variant: str = "bench"
    custom_exprs: dict | None = None
    m_ladder: list = field(default_factory=lambda: [1000])
    n_ladder: list = field(default_factory=lambda: [40])
    eps_rule: str = "table1"
    backend: str = "fast"
    strict_validation: bool = False
    output: str | None = None
    t_final: float = 1.0

    def make_problem(self):
        if self.custom_exprs is not None:
            return custom_problem(self.orders, self.custom_exprs,
                                  t_final=self.t_final)
        return manufactured_problem(self.orders, self.problem_case,
                                    variant=self.problem_variant,
                                    t_final=self.t_final)


def eps_for(rule: str, orders: MultiTermOrders, tau: float) -> list:
    """Per-order kernel tolerances from an eps rule string."""
    if rule == "table1":
        return [tau ** (4.0 - a) * 1e-3 for a in orders.alphas]
    if rule == "tau4":
        return [tau ** (4.0 - a) for a in orders.alphas]
    if rule.startswith("fixed:"):
        return [float(rule.split(":", 1)[1])] * len(orders.terms)
    raise ConfigError(f"eps_rule: unknown rule {rule!r}")


def _ladder(raw, name: str) -> list:
    if isinstance(raw, (int, float)):
        vals = [int(raw)]
    elif isinstance(raw, list) and raw and all(isinstance(v, (int, float)) for v in raw):
        vals = [int(v) for v in raw]
    else:
        raise ConfigError(f"grid.{name}: expected integer or list of integers")
    if any(v < 1 for v in vals):
        raise ConfigError(f"grid.{name}: entries must be positive")
    for a, b in zip(vals, vals[1:]):
        if b != 2 * a:
            raise ConfigError(f"grid.{name}: ladder must be successive doublings, "
                              f"got {a} -> {b}")
    return vals


def parse_config(text: str, command: str | None = None) -> ExperimentConfig:
    """Strict parse of a JSON experiment configuration.

    Unknown keys are rejected; field problems are reported by name.  The
    command may come from the document or the CLI argument; both present
    must agree.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    unknown = doc.keys() - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")

    cmd = doc.get("command", command)
    if cmd is None:
        raise ConfigError("command: missing (give it in the config or on the CLI)")
    if command is not None and "command" in doc and doc["command"] != command:
        raise ConfigError(f"command: config says {doc['command']!r}, CLI says {command!r}")
    if cmd not in _COMMANDS:
        raise ConfigError(f"command: unknown command {cmd!r}")

    if "orders" not in doc:
        raise ConfigError("orders: missing")
    try:
        orders = MultiTermOrders.from_pairs(doc["orders"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"orders: {exc}")

    cfg = ExperimentConfig(command=cmd, orders=orders)

    problem = doc.get("problem", "case1")
    if isinstance(problem, str):
        if problem in ("case1", "case2", "case3"):
            cfg.problem_case = int(problem[-1])
        else:
            raise ConfigError(f"problem: unknown named problem {problem!r}")
    elif isinstance(problem, dict):
        unknown = problem.keys() - {"case", "variant", "custom"}
        if unknown:
            raise ConfigError(f"problem: unknown keys {sorted(unknown)}")
        if "custom" in problem:
            if not isinstance(problem["custom"], dict):
                raise ConfigError("problem.custom: expected an object of expressions")
            cfg.custom_exprs = problem["custom"]
        else:
            if "case" not in problem:
                raise ConfigError("problem: needs 'case' or 'custom'")
            if problem["case"] not in (1, 2, 3):
                raise ConfigError(f"problem.case: must be 1, 2, or 3")
            cfg.problem_case = problem["case"]
            variant = problem.get("variant", "bench")
            if variant not in ("bench", "mms"):
                raise ConfigError(f"problem.variant: must be 'bench' or 'mms'")
            cfg.problem_variant = variant
    else:
        raise ConfigError("problem: expected a name or an object")

    grid = doc.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("grid: expected an object")
    unknown = grid.keys() - {"M", "N"}
    if unknown:
        raise ConfigError(f"grid: unknown keys {sorted(unknown)}")
    if "M" in grid:
        raw_m = grid["M"]
        if raw_m == "paper-h-proxy":
            # alias for the reference tables' spatial resolution
            print("note: grid.M alias 'paper-h-proxy' resolved to M=1000",
                  file=sys.stderr)
            raw_m = 1000
        cfg.m_ladder = _ladder(raw_m, "M")
    if "N" in grid:
        cfg.n_ladder = _ladder(grid["N"], "N")

    rule = doc.get("eps_rule", "table1")
    if not (rule in _EPS_RULES or (isinstance(rule, str) and rule.startswith("fixed:"))):
        raise ConfigError(f"eps_rule: must be one of {_EPS_RULES} or 'fixed:<value>'")
    if isinstance(rule, str) and rule.startswith("fixed:"):
        try:
            float(rule.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"eps_rule: bad fixed tolerance in {rule!r}")
    cfg.eps_rule = rule

    backend = doc.get("backend", "fast")
    if backend not in _BACKENDS:
        raise ConfigError(f"backend: must be one of {_BACKENDS}")
    cfg.backend = backend

    strict = doc.get("strict_validation", False)
    if not isinstance(strict, bool):
        raise ConfigError("strict_validation: expected a boolean")
    cfg.strict_validation = strict

    if "output" in doc:
        if not isinstance(doc["output"], str):
            raise ConfigError("output: expected a path string")
        cfg.output = doc["output"]

    if "t_final" in doc:
        if not isinstance(doc["t_final"], (int, float)) or doc["t_final"] <= 0:
            raise ConfigError("t_final: expected a positive number")
        cfg.t_final = float(doc["t_final"])

    return cfg


# -- study drivers ------------------------------------------------------------


def _backends(cfg: ExperimentConfig) -> list:
    return ["fast", "direct"] if cfg.backend == "both" else [cfg.backend]


def _one_run(cfg: ExperimentConfig, problem, M: int, N: int, backend: str):
    tau = cfg.t_final / N
    eps = eps_for(cfg.eps_rule, cfg.orders, tau) if backend == "fast" else None
    validation = "strict" if cfg.strict_validation else "warn"
    return run_solver(problem, M, N, backend=backend, eps=eps,
                      validation=validation)


def _ladder_report(cfg: ExperimentConfig, direction: str) -> list:
    problem = cfg.make_problem()
    reports = []
    for backend in _backends(cfg):
        rep = ConvergenceReport(
            direction=direction,
            case=problem.label,
            alphas=tuple(cfg.orders.alphas),
            lambdas=tuple(cfg.orders.lams),
            backend=backend,
            eps_rule=cfg.eps_rule,
        )
        if direction == "temporal":
            points = [(cfg.m_ladder[-1], n) for n in cfg.n_ladder]
        else:
            points = [(m, cfg.n_ladder[-1]) for m in cfg.m_ladder]
        for M, N in points:
            res = _one_run(cfg, problem, M, N, backend)
            rep.add(res.tau, res.h, res.err_l2_max, res.err_h1_max,
                    res.counters.n_exp_total, res.counters.stored_reals,
                    res.counters.wall_time * 1e3)
        reports.append(rep)
    return reports


def _cmd_solve(cfg: ExperimentConfig, outdir: Path) -> int:
    reports = _ladder_report(cfg, "temporal")
    # single-point solve: keep only the last ladder entry of each backend
    rows = []
    for rep in reports:
        rows.extend(rep.csv_rows()[-1:] if len(cfg.n_ladder) == 1 else rep.csv_rows())
    _emit(outdir, rows, "\n\n".join(r.text_table() for r in reports))
    return 0


def _cmd_study(cfg: ExperimentConfig, outdir: Path, direction: str) -> int:
    reports = _ladder_report(cfg, direction)
    rows = [row for rep in reports for row in rep.csv_rows()]
    _emit(outdir, rows, "\n\n".join(r.text_table() for r in reports))
    return 0


def _cmd_compare(cfg: ExperimentConfig, outdir: Path) -> int:
    problem = cfg.make_problem()
    ladder: dict = {"fast": [], "direct": []}
    rows = []
    for backend in ("fast", "direct"):
        rep = ConvergenceReport("temporal", problem.label,
                                tuple(cfg.orders.alphas), tuple(cfg.orders.lams),
                                backend, cfg.eps_rule)
        for N in cfg.n_ladder:
            res = _one_run(cfg, problem, cfg.m_ladder[-1], N, backend)
            ladder[backend].append({
                "N": N,
                "work": res.counters.kernel_multiplies,
                "stored_reals": res.counters.stored_reals,
                "wall_s": res.counters.wall_time,
            })
            rep.add(res.tau, res.h, res.err_l2_max, res.err_h1_max,
                    res.counters.n_exp_total, res.counters.stored_reals,
                    res.counters.wall_time * 1e3)
        rows.extend(rep.csv_rows())
    summary = scaling_report(ladder)
    lines = ["backend comparison (work = kernel-sum multiplies)"]
    for backend in ("fast", "direct"):
        data = summary[backend]
        lines.append(f"{backend}: work exponent {data['work_exponent']:.3f}, "
                     f"stored_reals {data['stored_reals']}, wall_s "
                     + "/".join(f"{w:.2f}" for w in data["wall_s"]))
    speedups = [d["wall_s"] / f["wall_s"]
                for d, f in zip(ladder["direct"], ladder["fast"])]
    lines.append("speedup per N: " + "/".join(f"{s:.2f}" for s in speedups))
    _emit(outdir, rows, "\n".join(lines))
    return 0


def _cmd_coeff_check(cfg: ExperimentConfig, outdir: Path) -> int:
    tau = cfg.t_final / cfg.n_ladder[-1]
    backend = "direct" if cfg.backend == "direct" else "fast"
    eps = eps_for(cfg.eps_rule, cfg.orders, tau) if backend == "fast" else None
    engine = CoefficientEngine(cfg.orders, tau, mode=backend, eps=eps,
                               t_final=cfg.t_final, validation="off")
    report = engine.coeff_property_check(cfg.n_ladder[-1])
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "coeff_check.csv"
    with open(path, "w") as fh:
        fh.write("n,g0,gn,monotone_ok,sign_ok,bn_ratio\n")
        for row in report["rows"]:
            fh.write(f"{row['n']},{row['g0']:.10e},{row['gn']:.10e},"
                     f"{int(row['monotone_ok'])},{int(row['sign_ok'])},"
                     f"{row['bn_ratio']:.6f}\n")
    ok = (report["positivity_chain_ok"] and report["sign_combination_ok"]
          and report["bn_bound_ok"])
    print(f"coeff-check: chain={report['positivity_chain_ok']} "
          f"sign={report['sign_combination_ok']} bn={report['bn_bound_ok']} "
          f"-> {path}")
    if not ok and cfg.strict_validation:
        return 2
    return 0


def _cmd_soe_check(cfg: ExperimentConfig, outdir: Path) -> int:
    tau = cfg.t_final / cfg.n_ladder[-1]
    eps = eps_for(cfg.eps_rule, cfg.orders, tau)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = []
    from .coefficients import solve_sigma
    sigma = solve_sigma(cfg.orders, tau).sigma
    for (alpha, _), e in zip(cfg.orders.terms, eps):
        beta = alpha - 1.0
        soe = build_soe(beta, e, sigma * tau, cfg.t_final)
        scan = soe_error_scan(soe, 10 * max(10 * soe.n_exp, 1000))
        soe.dump_csv(outdir / f"soe_nodes_beta{beta:.3f}.csv")
        lines.append(f"beta={beta:.3f} eps={e:.3e} n_exp={soe.n_exp} "
                     f"cert={soe.eps_achieved:.3e} rescan10x={scan['max_abs_error']:.3e} "
                     f"ok={scan['max_abs_error'] <= e}")
    (outdir / "soe_check.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _emit(outdir: Path, rows, table_text: str) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "results.csv").write_text(format_csv_rows(rows))
    (outdir / "table.txt").write_text(table_text + "\n")
    print(table_text)
    print(f"wrote {outdir / 'results.csv'}")


def run_config(cfg: ExperimentConfig, outdir: str | Path | None = None) -> int:
    """Execute one experiment configuration; returns the process exit code."""
    out = Path(outdir) if outdir is not None else Path(cfg.output or "fracwave-out")
    try:
        if cfg.command == "solve":
            return _cmd_solve(cfg, out)
        if cfg.command == "temporal-study":
            return _cmd_study(cfg, out, "temporal")
        if cfg.command == "spatial-study":
            return _cmd_study(cfg, out, "spatial")
        if cfg.command == "compare-backends":
            return _cmd_compare(cfg, out)
        if cfg.command == "coeff-check":
            return _cmd_coeff_check(cfg, out)
        if cfg.command == "soe-check":
            return _cmd_soe_check(cfg, out)
        raise ConfigError(f"command: unhandled {cfg.command!r}")
    except CoefficientValidationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracwave",
        description="Multi-term time-fractional wave equation solver and "
                    "convergence harness",
    )
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--strict", action="store_true",
                        help="abort on coefficient-validation failures")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text, command=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.strict:
        cfg.strict_validation = True
    return run_config(cfg, outdir=args.out)


if __name__ == "__main__":
    sys.exit(main())
