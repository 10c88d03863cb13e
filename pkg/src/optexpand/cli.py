"""Command-line front end: ``optexpand <command> --config scenario.yaml``.

A scenario file is YAML with a ``mode`` (investment or reinsurance), one
``params`` block holding every model coefficient, and optional ``solver``,
``mc`` and ``outputs`` blocks. Solver and Monte Carlo settings default to
the library defaults; model coefficients never do.

Exit codes: 0 success, 1 domain error, 2 config error, 3 failed verification.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .closed_form import PolicyKind, PolicySpec, optimal_control, value_full
from .errors import (
    BoundaryAmbiguityError,
    BudgetError,
    ConvergenceError,
    DomainError,
    NonFiniteError,
    StabilityError,
)
from .model import (
    MarketParams,
    compute_schedule,
    feasibility,
    validate,
    waiting_time_formula,
)
from .reinsurance import InsuranceParams, case_label, to_diffusion
from .simulator import McConfig, admissibility_check, compare_policies, simulate_diffusion, simulate_jump
from .vi_solver import Grid, SolverConfig, solve_hjb_post, solve_vi, verification_report

EXIT_OK, EXIT_DOMAIN, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3
CSV_SCHEMA = 1

_GRID_KEYS = {"Nt": int, "Nx": int, "below": float, "above": float}
_SOLVER_KEYS = {f.name: f.type for f in fields(SolverConfig)}
_MC_KEYS = {"n_paths": int, "n_steps": int, "seed": int, "antithetic": bool, "budget": int}
_OUTPUTS = ("report", "surface")


class ConfigError(Exception):
    """Malformed scenario file; the message names the line or field."""


@dataclass
class ScenarioConfig:
    mode: str
    params: MarketParams | InsuranceParams
    grid: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: McConfig = field(default_factory=McConfig)
    outputs: list = field(default_factory=lambda: ["report"])

    @property
    def market(self) -> MarketParams:
        """Diffusion coefficients (mapped from the insurer in reinsurance mode)."""
        if self.mode == "reinsurance":
            return to_diffusion(self.params)
        return validate(self.params)

    @property
    def x0(self) -> float:
        return self.params.x0hat if self.mode == "reinsurance" else self.params.x0

    def make_grid(self) -> Grid:
        g = {"Nt": 800, "Nx": 800, "below": 7.0, "above": 9.0, **self.grid}
        return Grid.around(self.x0, self.params.T, g["Nt"], g["Nx"], g["below"], g["above"])


# -- config parsing ---------------------------------------------------------


def _number(value, where: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _block(raw, name: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(raw).__name__}")
    return raw


def _reject_unknown(raw: dict, allowed, where: str):
    extra = sorted(set(raw) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, extra))}")


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown line"
        raise ConfigError(f"{source}: {line}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    raw = _block(raw, source)
    _reject_unknown(raw, ("mode", "params", "solver", "mc", "outputs"), source)

    mode = raw.get("mode")
    if mode not in ("investment", "reinsurance"):
        raise ConfigError(f"mode: expected 'investment' or 'reinsurance', got {mode!r}")
    cls = MarketParams if mode == "investment" else InsuranceParams
    if "params" not in raw:
        raise ConfigError("params: missing block")
    pblock = _block(raw["params"], "params")
    names = [f.name for f in fields(cls)]
    _reject_unknown(pblock, names, "params")
    missing = [n for n in names if n not in pblock]
    if missing:
        raise ConfigError(f"params: missing {', '.join(missing)} (model coefficients have no defaults)")
    params = cls(**{n: _number(pblock[n], f"params.{n}") for n in names})

    sblock = _block(raw.get("solver"), "solver")
    _reject_unknown(sblock, list(_GRID_KEYS) + list(_SOLVER_KEYS), "solver")
    grid = {k: _number(v, f"solver.{k}", _GRID_KEYS[k]) for k, v in sblock.items() if k in _GRID_KEYS}
    skw = {k: _number(v, f"solver.{k}", int if k == "max_iters" else float)
           for k, v in sblock.items() if k in _SOLVER_KEYS}

    mblock = _block(raw.get("mc"), "mc")
    _reject_unknown(mblock, _MC_KEYS, "mc")
    mkw = {}
    for k, v in mblock.items():
        if _MC_KEYS[k] is bool:
            if not isinstance(v, bool):
                raise ConfigError(f"mc.{k}: expected true/false, got {v!r}")
            mkw[k] = v
        else:
            mkw[k] = _number(v, f"mc.{k}", int)

    outputs = raw.get("outputs", ["report"])
    if not isinstance(outputs, list) or any(o not in _OUTPUTS for o in outputs):
        raise ConfigError(f"outputs: expected a list drawn from {list(_OUTPUTS)}, got {outputs!r}")
    return ScenarioConfig(mode, params, grid, SolverConfig(**skw), McConfig(**mkw), outputs)


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# -- output -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def to_csv(table: str, columns: list[tuple[str, str]], rows: list[dict]) -> str:
    """Header ``name[unit]`` per column plus a schema column; LF endings."""
    buf = io.StringIO()
    header = [f"{name}[{unit}]" for name, unit in columns] + ["schema"]
    buf.write(",".join(header) + "\n")
    tag = f"{table}/v{CSV_SCHEMA}"
    for row in rows:
        buf.write(",".join([_fmt(row.get(name)) for name, _ in columns] + [tag]) + "\n")
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_fmt) + "\n"


def _emit(args, name: str, text: str):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / name, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _table(args, name: str, columns, rows, meta: dict | None = None):
    if args.format == "json":
        _emit(args, f"{name}.json", _json({"schema": f"{name}/v{CSV_SCHEMA}",
                                           "columns": dict(columns), **(meta or {}),
                                           "rows": rows}))
    else:
        _emit(args, f"{name}.csv", to_csv(name, columns, rows))


# -- commands ---------------------------------------------------------------


def _case_name(cfg: ScenarioConfig, schedule) -> str:
    if cfg.mode == "reinsurance":
        return case_label(schedule)
    return schedule.case.value


def cmd_classify(cfg: ScenarioConfig, args) -> int:
    p = cfg.market
    feas = feasibility(p)
    s = compute_schedule(p)
    row = {
        "case": _case_name(cfg, s),
        "cond_return": feas.cond_return,
        "rho_max": feas.rho_max,
        "cond_cost": feas.cond_cost,
        "t1": s.t1,
        "t2": s.t2,
        "waiting_time": s.waiting_time,
    }
    cols = [("case", "-"), ("cond_return", "bool"), ("rho_max", "1/yr"), ("cond_cost", "bool"),
            ("t1", "yr"), ("t2", "yr"), ("waiting_time", "yr")]
    _table(args, "classify", cols, [row])
    return EXIT_OK


def cmd_boundary(cfg: ScenarioConfig, args) -> int:
    p = cfg.market
    lo, hi = args.t_range if args.t_range else (0.0, p.T)
    if not (0.0 <= lo < hi <= p.T):
        raise DomainError("t_range", f"[{lo}, {hi}] must lie inside [0, T] = [0, {p.T}]")
    n = args.points or 200
    if n < 2:
        raise DomainError("points", "need at least 2 samples")
    s = compute_schedule(p)
    t = np.linspace(lo, hi, n)
    f = np.atleast_1d(optimal_control(t, p, s))
    rows = [{"kind": "sample", "t": float(ti), "exposure": float(fi)} for ti, fi in zip(t, f)]
    if s.expands:
        for label, tm in (("t1", s.t1), ("t2", s.t2)):
            rows.append({"kind": label, "t": tm, "exposure": float(optimal_control(tm, p, s))})
    cols = [("kind", "-"), ("t", "yr"), ("exposure", "-")]
    _table(args, "boundary", cols, rows, {"case": _case_name(cfg, s)})
    return EXIT_OK


def sweep_rows(cfg: ScenarioConfig, parameter: str, lo: float, hi: float, steps: int) -> list[dict]:
    names = {f.name for f in fields(type(cfg.params))}
    if parameter not in names:
        raise ConfigError(f"sweep: {parameter!r} is not a field of params")
    rows = []
    for value in np.linspace(lo, hi, steps):
        point = ScenarioConfig(cfg.mode, cfg.params.replace(**{parameter: float(value)}))
        row = {"value": float(value), "feasible": False}
        try:
            p = point.market
        except DomainError as exc:
            row["case"] = "Invalid"
            row["note"] = str(exc)
            rows.append(row)
            continue
        s = compute_schedule(p)
        row.update(case=_case_name(point, s), t1=s.t1, t2=s.t2, waiting_time=s.waiting_time,
                   feasible=s.expands)
        if feasibility(p).cond_return:
            row["waiting_time_formula"] = waiting_time_formula(p)
        rows.append(row)
    return rows


def cmd_sweep(cfg: ScenarioConfig, args) -> int:
    if not args.parameter or not args.range:
        raise ConfigError("sweep: --parameter and --range are required")
    steps = args.steps if args.steps is not None else (args.points or 101)
    lo, hi = args.range
    if steps < 1 or (steps > 1 and not hi > lo):
        raise ConfigError(f"sweep: need steps >= 1 and an increasing range, got {steps} over [{lo}, {hi}]")
    rows = sweep_rows(cfg, args.parameter, lo, hi, steps)
    cols = [("value", args.parameter), ("case", "-"), ("feasible", "bool"), ("t1", "yr"),
            ("t2", "yr"), ("waiting_time", "yr"), ("waiting_time_formula", "yr"), ("note", "-")]
    _table(args, "sweep", cols, rows, {"parameter": args.parameter})
    if not any(r["feasible"] for r in rows):
        raise DomainError(args.parameter, "every sweep point is infeasible")
    return EXIT_OK


def _perturbations(p: MarketParams, s) -> dict[str, PolicySpec]:
    """The five perturbed policies used by the dominance check."""
    post = (s.t2, p.T)
    out = {
        "optimal": PolicySpec(s),
        "post_plus_0.2": PolicySpec(s, PolicyKind.PERTURBED, offset=0.2, window=post),
        "post_minus_0.2": PolicySpec(s, PolicyKind.PERTURBED, offset=-0.2, window=post),
        "shift_plus_0.5": PolicySpec(s, PolicyKind.PERTURBED, expansion_shift=0.5),
        "shift_minus_0.5": PolicySpec(s, PolicyKind.PERTURBED, expansion_shift=-0.5),
    }
    if s.t2 > s.t1:
        out["wait_minus_0.2"] = PolicySpec(s, PolicyKind.PERTURBED, offset=-0.2, window=(s.t1, s.t2))
    else:
        out["pre_minus_0.2"] = PolicySpec(s, PolicyKind.PERTURBED, offset=-0.2, window=(0.0, p.T))
    return out


def _check(name: str, value, tolerance, passed: bool | None, note: str = "") -> dict:
    status = "not run" if passed is None else ("pass" if passed else "fail")
    return {"name": name, "value": value, "tolerance": tolerance, "status": status, "note": note}


def _pde_checks(cfg: ScenarioConfig) -> tuple[list[dict], dict]:
    p = cfg.market
    s = compute_schedule(p)
    grid = cfg.make_grid()
    start = time.perf_counter()
    try:
        post = solve_hjb_post(p, grid, config=cfg.solver)
        sol = solve_vi(p, grid, post, config=cfg.solver)
    except (ConvergenceError, StabilityError, BoundaryAmbiguityError) as exc:
        return [_check("pde_solve", None, None, False, f"{type(exc).__name__}: {exc}")], {}
    report = verification_report(sol, p, s, cfg.solver)
    report["runtime_s"] = time.perf_counter() - start
    checks = [_check(f"pde_{c['name']}", c["value"], c["tolerance"], c["passed"])
              for c in report["checks"]]
    if "surface" in cfg.outputs:
        step_t = max(1, grid.Nt // 40)
        step_x = max(1, grid.Nx // 40)
        rows = []
        for n in range(0, grid.Nt + 1, step_t):
            t = grid.t_nodes[n]
            for j in range(0, grid.Nx + 1, step_x):
                x = grid.x_nodes[j]
                rows.append({"t": t, "x": x, "v_pde": sol.v_full[n, j],
                             "v_exact": float(value_full(t, x, p, s)),
                             "exercised": bool(sol.exercise_mask[n, j])})
        report["surface"] = rows
    return checks, report


def _mc_checks(cfg: ScenarioConfig) -> tuple[list[dict], dict]:
    p = cfg.market
    s = compute_schedule(p)
    mc = cfg.mc.check()
    exact = float(value_full(0.0, cfg.x0, p, s))
    est = simulate_diffusion(p, PolicySpec(s), mc, x0=cfg.x0)
    z = (est.mean - exact) / est.std_err if est.std_err > 0 else (0.0 if est.mean == exact else math.inf)
    checks = [_check("mc_attainment_z", abs(z), 3.0, abs(z) <= 3.0)]
    report = {"exact_value": exact, "estimate": est.as_dict(), "z_score": z}
    if s.expands:
        rows = compare_policies(p, _perturbations(p, s), mc, x0=cfg.x0)
        base = next(r for r in rows if r["policy"] == "optimal")
        for r in rows:
            if r["policy"] == "optimal":
                continue
            excess = (r["mean"] - base["mean"]) / r["combined_std_err"]
            checks.append(_check(f"mc_dominance_{r['policy']}", excess, 3.0, excess <= 3.0))
        report["comparison"] = rows
    return checks, report


def cmd_verify(cfg: ScenarioConfig, args) -> int:
    if args.mc_only:
        pde_checks = [_check("pde_suite", None, None, None, "skipped by --mc-only")]
        pde_report = {}
    else:
        pde_checks, pde_report = _pde_checks(cfg)
    mc_checks, mc_report = _mc_checks(cfg)
    checks = pde_checks + mc_checks
    failed = [c["name"] for c in checks if c["status"] == "fail"]
    surface = pde_report.pop("surface", None)
    report = {
        "version": __version__,
        "mode": cfg.mode,
        "params": cfg.params.as_dict(),
        "passed": not failed,
        "failed": failed,
        "checks": checks,
        "pde": pde_report,
        "mc": mc_report,
    }
    if args.format == "json":
        _emit(args, "verify.json", _json(report))
    else:
        cols = [("name", "-"), ("status", "-"), ("value", "-"), ("tolerance", "-"), ("note", "-")]
        _emit(args, "verify.csv", to_csv("verify", cols, checks))
    if surface is not None and args.out:
        cols = [("t", "yr"), ("x", "currency"), ("v_pde", "utility"), ("v_exact", "utility"),
                ("exercised", "bool")]
        _emit(args, "surface.csv", to_csv("surface", cols, surface))
    for name in failed:
        print(f"verification failed: {name}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    p = cfg.market
    s = compute_schedule(p)
    mc = cfg.mc.check()
    exact = float(value_full(0.0, cfg.x0, p, s))
    rows = []
    est = simulate_diffusion(p, PolicySpec(s), mc, x0=cfg.x0)
    rows.append({"model": "diffusion", "policy": "optimal", **est.as_dict(), "exact": exact})
    if cfg.mode == "reinsurance":
        jump = simulate_jump(cfg.params, PolicySpec(s), mc, x0=cfg.x0)
        rows.append({"model": "jump", "policy": "optimal", **jump.as_dict(), "exact": exact})
    if args.compare and s.expands:
        for r in compare_policies(p, _perturbations(p, s), mc, x0=cfg.x0):
            if r["policy"] != "optimal":
                rows.append({"model": "diffusion", **r, "exact": exact})
    adm = admissibility_check(p, PolicySpec(s), mc, x0=cfg.x0)
    cols = [("model", "-"), ("policy", "-"), ("mean", "utility"), ("std_err", "utility"),
            ("ci95_low", "utility"), ("ci95_high", "utility"), ("n_effective", "paths"),
            ("exact", "utility"), ("gap", "utility"), ("combined_std_err", "utility")]
    _table(args, "simulate", cols, rows, {"admissibility": adm})
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "boundary": cmd_boundary,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optexpand", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario YAML file")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, help="override mc.seed")
    common.add_argument("--points", type=int, help="sample count for boundary/sweep")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="feasibility, case and expansion times")
    b = sub.add_parser("boundary", parents=[common], help="optimal exposure path with t1/t2 markers")
    b.add_argument("--t-range", nargs=2, type=float, metavar=("LO", "HI"))
    s = sub.add_parser("sweep", parents=[common], help="expansion times across one parameter")
    s.add_argument("--parameter")
    s.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    s.add_argument("--steps", type=int)
    v = sub.add_parser("verify", parents=[common], help="PDE and Monte Carlo checks against the closed form")
    v.add_argument("--mc-only", action="store_true", help="skip the PDE suite")
    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo expected utility")
    m.add_argument("--compare", action="store_true", help="also run the perturbed policies")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            cfg.mc = McConfig(**{**cfg.mc.__dict__, "seed": args.seed})
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, BudgetError, NonFiniteError, OverflowError) as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
