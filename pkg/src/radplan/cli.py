"""Command-line front end.

Subcommands::

    radplan solve     radial solution -> solution.csv (r,u,du) + report.json
    radplan classify  large / bounded classification from the envelopes
    radplan model     planning model: closed forms, bounds, HJB residual
    radplan simulate  Monte Carlo policy comparison for the planning model
    radplan verify    solve and run every structural check

Each run writes ``config.json`` (the fully resolved :class:`RunConfig`) and a
``report.json`` carrying the SHA-256 hash of the scientific part of that
config.  Exit codes: 0 success, 2 invalid input, 3 numeric failure (the
report is still written), 64 usage error.
"""
from __future__ import annotations

import argparse
import ast
import copy
import csv
import hashlib
import json
import logging
import math
import operator
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .errors import BlowUpError, NumericError, RadplanError, ValidationError
from .nonlinearity import NonlinearityPair, validate_pair
from .planning_model import (
    PolicyField, build_model, closed_H, closed_p_bar, closed_p_under, hjb_residual,
)
from .radial_solver import GridConfig, RadialProblem, RadialSolution, ode_oracle, picard_solve
from .sde_sim import SimConfig, run_simulation

log = logging.getLogger("radplan")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 64
COMMANDS = ("solve", "classify", "model", "simulate", "verify")


# --------------------------------------------------------------------------
# coefficient expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"exp": np.exp, "log": np.log, "sqrt": np.sqrt}
_CONSTS = {"e": math.e, "pi": math.pi}


def parse_expression(text: str):
    """Compile an arithmetic expression in ``r`` into a vectorised function.

    Accepted: numbers, ``r``, ``e``, ``pi``, ``+ - * / ^ **``, unary signs and
    the functions exp, log and sqrt.

    >>> f = parse_expression("r^2/9")
    >>> float(f(np.array(3.0)))
    1.0
    """
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("coefficient expression must be a non-empty string")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float):
            v = float(node.value)
            return lambda r: v
        if isinstance(node, ast.Name):
            if node.id == "r":
                return lambda r: r
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda r: v
            raise ValidationError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, lhs, rhs = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda r: op(lhs(r), rhs(r))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            op, arg = _UNOPS[type(node.op)], build(node.operand)
            return lambda r: op(arg(r))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            fn, arg = _FUNCS[node.func.id], build(node.args[0])
            return lambda r: fn(arg(r))
        raise ValidationError(f"unsupported syntax {ast.dump(node)[:40]!r} in {text!r}")

    body = build(tree)

    def coef(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(body(r), dtype=float), r.shape).copy()

    coef.expression = text
    return coef


# --------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    command: str
    problem: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    sim: dict | None = None
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {"command", "problem", "grid", "analysis", "sim", "output"}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown config sections: {sorted(extra)}")
        if "command" not in data:
            raise ValidationError("config needs a 'command'")
        return cls(**copy.deepcopy(data))

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        return cls.from_dict(data)

    def scientific(self) -> dict:
        """The config without output locations; this is what gets hashed."""
        d = self.to_dict()
        d.pop("output", None)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.scientific(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


DEFAULTS = {
    "problem": {"pair": "model-log", "N": 3, "u0": 1.0, "sigma": None, "alpha": None, "a": None, "b": None},
    "grid": {"r_max": 2.0, "n_points": 4001, "method": "picard", "tol_abs": 1e-12, "tol_rel": 1e-12,
             "max_iter": 10_000, "cross_check": False},
    "analysis": {"probes": list(analysis.DEFAULT_PROBES)},
    "sim": {"horizon": 15.0, "dt": 1e-3, "n_paths": 10_000, "seed": 0, "y0": None,
            "scalings": [0.0, 1.0, 2.0], "r_max": 10.0, "n_points": 4001, "block_size": 10_000,
            "workers": 1},
    "output": {"out": "."},
}

# CLI flag destination -> (config section, key)
_FLAG_MAP = {
    "pair": ("problem", "pair"), "N": ("problem", "N"), "u0": ("problem", "u0"),
    "sigma": ("problem", "sigma"), "alpha": ("problem", "alpha"),
    "a": ("problem", "a"), "b": ("problem", "b"),
    "r_max": ("grid", "r_max"), "n_grid": ("grid", "n_points"), "method": ("grid", "method"),
    "tol_abs": ("grid", "tol_abs"), "tol_rel": ("grid", "tol_rel"), "max_iter": ("grid", "max_iter"),
    "cross_check": ("grid", "cross_check"),
    "probes": ("analysis", "probes"),
    "horizon": ("sim", "horizon"), "dt": ("sim", "dt"), "n_paths": ("sim", "n_paths"),
    "seed": ("sim", "seed"), "y0": ("sim", "y0"), "scalings": ("sim", "scalings"),
    "field_r_max": ("sim", "r_max"), "field_n_grid": ("sim", "n_points"),
    "block_size": ("sim", "block_size"), "workers": ("sim", "workers"),
    "out": ("output", "out"),
}


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Merge built-in defaults, an optional ``--config`` file and explicit flags."""
    base = {k: dict(v) for k, v in DEFAULTS.items()}
    if command != "simulate":
        base["sim"] = None
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            loaded = RunConfig.from_json(Path(cfg_path).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {cfg_path}: {exc}") from None
        if loaded.command != command:
            raise ValidationError(f"config is for {loaded.command!r}, not {command!r}")
        for section, values in loaded.to_dict().items():
            if section == "command" or values is None:
                continue
            base[section] = {**(base.get(section) or {}), **values}
    for dest, (section, key) in _FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is not None and base.get(section) is not None:
            base[section][key] = value
    if getattr(args, "model_log", False):
        base["problem"]["pair"] = "model-log"
    return RunConfig(command, base["problem"], base["grid"], base["analysis"], base["sim"], base["output"])


def _floats(text: str) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------
# building problems from a config

def make_problem(cfg: RunConfig):
    """Return ``(problem, model_or_None)`` described by the problem section."""
    p = cfg.problem
    N = p.get("N")
    if not isinstance(N, int) or isinstance(N, bool):
        raise ValidationError(f"N must be an integer, got {N!r}")
    if p.get("sigma") is not None:
        if p.get("pair", "model-log") != "model-log":
            raise ValidationError("planning model parameters require the model-log pair")
        alpha = p.get("alpha")
        if alpha is None:
            raise ValidationError("planning model needs alpha")
        model, problem = build_model(N, tuple(p["sigma"]), float(alpha), float(p.get("u0", 1.0)))
        return problem, model
    if p.get("a") is None or p.get("b") is None:
        raise ValidationError("give coefficient expressions --a and --b, or model parameters --sigma/--alpha")
    pair = NonlinearityPair.from_name(str(p.get("pair", "model-log")))
    report = validate_pair(pair)
    if not report.ok:
        msgs = "; ".join(f"{c.name}: {c.detail}" for c in report.failures())
        raise ValidationError(f"nonlinearity {pair.label} fails validation: {msgs}")
    problem = RadialProblem(N, parse_expression(p["a"]), parse_expression(p["b"]), pair, float(p.get("u0", 1.0)))
    return problem, None


def make_grid(cfg: RunConfig) -> GridConfig:
    g = cfg.grid
    try:
        return GridConfig(r_max=float(g["r_max"]), n_points=int(g["n_points"]), tol_abs=float(g["tol_abs"]),
                          tol_rel=float(g["tol_rel"]), max_iter=int(g["max_iter"]))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def _solve(problem: RadialProblem, cfg: RunConfig, grid: GridConfig) -> RadialSolution:
    method = cfg.grid.get("method", "picard")
    if method not in ("picard", "oracle"):
        raise ValidationError(f"unknown method {method!r}")
    problem.check_coefficients(grid.grid)
    return (picard_solve if method == "picard" else ode_oracle)(problem, grid)


# --------------------------------------------------------------------------
# output

def _clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_report(out: Path, cfg: RunConfig, status: str, results: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    report = {"command": cfg.command, "status": status, "config_hash": cfg.config_hash(),
              "config": cfg.scientific(), "results": results}
    path = out / "report.json"
    path.write_text(json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n")
    return path


def write_solution_csv(path: Path, sol: RadialSolution) -> None:
    r = np.asarray(sol.grid)
    if np.any(np.diff(r) <= 0):
        raise NumericError("solution grid is not strictly increasing")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "u", "du"])
        for ri, ui, di in zip(r, sol.u, sol.du):
            w.writerow([repr(float(ri)), repr(float(ui)), repr(float(di))])


def _solution_summary(sol: RadialSolution) -> dict:
    return {"method": sol.method, "converged": sol.converged, "iterations": sol.iterations,
            "n_points": len(sol), "r_max": float(sol.grid[-1]), "u_at_r_max": float(sol.u[-1]),
            "du_at_r_max": float(sol.du[-1]), "blowup_radius": sol.blowup_radius}


# --------------------------------------------------------------------------
# commands

class CommandFailure(Exception):
    """Numeric failure after which a report has been assembled."""

    def __init__(self, results: dict):
        super().__init__(results.get("error", "numeric failure"))
        self.results = results


def cmd_solve(cfg: RunConfig, out: Path) -> dict:
    problem, _ = make_problem(cfg)
    grid = make_grid(cfg)
    try:
        sol = _solve(problem, cfg, grid)
    except BlowUpError as exc:
        partial = exc.solution
        if partial is not None:
            write_solution_csv(out / "solution.csv", partial)
        raise CommandFailure({"error": str(exc), "blowup_radius": exc.radius,
                              "solution": None if partial is None else _solution_summary(partial)}) from None
    write_solution_csv(out / "solution.csv", sol)
    results = {"solution": _solution_summary(sol)}
    if cfg.grid.get("cross_check"):
        other = (ode_oracle if sol.method == "picard" else picard_solve)(problem, grid)
        results["cross_check"] = {"method": other.method,
                                  "max_abs_diff": float(np.max(np.abs(other.u - sol.u)))}
    if not sol.converged:
        raise CommandFailure({**results, "error": "iteration did not converge"})
    return results


def cmd_classify(cfg: RunConfig, out: Path) -> dict:
    problem, _ = make_problem(cfg)
    rep = analysis.classify(problem, tuple(float(x) for x in cfg.analysis["probes"]))
    results = {"classification": rep.as_dict()}
    if problem.N >= 3:
        results["limit_identity"] = analysis.limit_identity(problem, rep.probe_radii).as_dict()
    return results


def _bounds_and_convexity(problem, sol):
    bounds = analysis.check_bounds(problem, sol)
    conv = analysis.check_convexity(problem, sol)
    b = bounds.as_dict()
    return b, conv.as_dict(), bounds.all_hold, (conv.convex if conv.applicable else True)


def cmd_model(cfg: RunConfig, out: Path) -> dict:
    problem, model = make_problem(cfg)
    if model is None:
        raise ValidationError("the model command needs --sigma and --alpha")
    grid = make_grid(cfg)
    sol = _solve(problem, cfg, grid)
    write_solution_csv(out / "solution.csv", sol)
    fld = PolicyField(model, sol)
    r_end = float(sol.grid[-1])
    hjb = hjb_residual(fld)
    bounds, conv, _, _ = _bounds_and_convexity(problem, sol)
    return {
        "model": model.as_dict(),
        "sigma_sq": model.sigma_sq,
        "closed_forms": {"H(e)": closed_H(model, max(math.e, model.u0)),
                         "P_bar(r_max)": closed_p_bar(model, r_end),
                         "P_under(r_max)": closed_p_under(model, r_end)},
        "solution": _solution_summary(sol),
        "value_at_r_max": float(fld.z_radial(r_end)),
        "hjb_residual": {"max": hjb.max, "mean": hjb.mean},
        "bounds": bounds,
        "convexity": conv,
    }


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    problem, model = make_problem(cfg)
    if model is None:
        raise ValidationError("the simulate command needs --sigma and --alpha")
    s = cfg.sim
    y0 = s.get("y0") or [1.0] * model.N
    try:
        sim_cfg = SimConfig(horizon=float(s["horizon"]), dt=float(s["dt"]), n_paths=int(s["n_paths"]),
                            seed=int(s["seed"]), y0=tuple(y0), block_size=int(s["block_size"]),
                            workers=int(s["workers"]))
        fgrid = GridConfig(r_max=float(s["r_max"]), n_points=int(s["n_points"]))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if len(sim_cfg.y0) != model.N:
        raise ValidationError(f"y0 needs {model.N} components")
    fld = PolicyField(model, picard_solve(problem, fgrid))
    rep = run_simulation(fld, sim_cfg, s["scalings"])
    results = {"simulation": rep.as_dict()}
    if not rep.valid:
        raise CommandFailure({**results, "error": "more than 1% of paths left the radial grid"})
    return results


def cmd_verify(cfg: RunConfig, out: Path) -> dict:
    problem, model = make_problem(cfg)
    grid = make_grid(cfg)
    sol = _solve(problem, cfg, grid)
    write_solution_csv(out / "solution.csv", sol)
    other = ode_oracle(problem, grid) if sol.method == "picard" else picard_solve(problem, grid)
    diff = float(np.max(np.abs(other.u - sol.u)))
    bounds, conv, b_ok, c_ok = _bounds_and_convexity(problem, sol)
    checks = {"converged": sol.converged, "oracle_agreement": diff <= 1e-5,
              "bounds": b_ok, "convexity": c_ok}
    results = {"solution": _solution_summary(sol), "oracle_max_abs_diff": diff,
               "bounds": bounds, "convexity": conv}
    if model is not None:
        hjb = hjb_residual(PolicyField(model, sol))
        results["hjb_residual"] = {"max": hjb.max, "mean": hjb.mean}
        checks["hjb_residual"] = hjb.max <= 1e-3
    results["checks"] = checks
    if not all(checks.values()):
        raise CommandFailure({**results, "error": "failed checks: " + ", ".join(k for k, v in checks.items() if not v)})
    return results


HANDLERS = {"solve": cmd_solve, "classify": cmd_classify, "model": cmd_model,
            "simulate": cmd_simulate, "verify": cmd_verify}


# --------------------------------------------------------------------------
# argument parsing

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _add_problem(p):
    g = p.add_argument_group("problem")
    g.add_argument("--model-log", action="store_true", help="use h(u)=u, g(u)=u ln u")
    g.add_argument("--pair", help="nonlinearity: model-log or power:p,q[,s0]")
    g.add_argument("--N", type=int, help="space dimension")
    g.add_argument("--u0", type=float, help="value at the origin")
    g.add_argument("--sigma", type=_floats, help="planning model diffusion coefficients, comma separated")
    g.add_argument("--alpha", type=float, help="planning model discount rate")
    g.add_argument("--a", help="coefficient a(r) as an expression in r")
    g.add_argument("--b", help="coefficient b(r) as an expression in r")


def _add_grid(p):
    g = p.add_argument_group("grid")
    g.add_argument("--r-max", dest="r_max", type=float)
    g.add_argument("--n-grid", dest="n_grid", type=int)
    g.add_argument("--method", choices=("picard", "oracle"))
    g.add_argument("--tol-abs", dest="tol_abs", type=float)
    g.add_argument("--tol-rel", dest="tol_rel", type=float)
    g.add_argument("--max-iter", dest="max_iter", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radplan", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"solve": "solve the radial problem", "classify": "large/bounded classification",
             "model": "planning model diagnostics", "simulate": "Monte Carlo policy comparison",
             "verify": "solve and run structural checks"}
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="RunConfig JSON; explicit flags override it")
        p.add_argument("--out", help="output directory (default: current directory)")
        _add_problem(p)
        if name != "classify":
            _add_grid(p)
        if name == "solve":
            p.add_argument("--cross-check", dest="cross_check", action="store_const", const=True,
                           help="also run the other solver and report the difference")
        if name == "classify":
            p.add_argument("--probes", type=_floats, help="probe radii, comma separated")
        if name == "simulate":
            g = p.add_argument_group("simulation")
            g.add_argument("--horizon", type=float)
            g.add_argument("--dt", type=float)
            g.add_argument("--n-paths", dest="n_paths", type=int)
            g.add_argument("--seed", type=int)
            g.add_argument("--y0", type=_floats)
            g.add_argument("--scalings", type=_floats)
            g.add_argument("--field-r-max", dest="field_r_max", type=float,
                           help="radius of the grid backing the feedback policy")
            g.add_argument("--field-n-grid", dest="field_n_grid", type=int)
            g.add_argument("--block-size", dest="block_size", type=int)
            g.add_argument("--workers", type=int)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                         format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
    except ValidationError as exc:
        print(f"radplan: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(cfg.output.get("out") or ".")
    try:
        results = HANDLERS[args.command](cfg, out)
    except CommandFailure as exc:
        path = write_report(out, cfg, "numeric-failure", exc.results)
        print(f"radplan: numeric failure: {exc}; report at {path}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, RadplanError, ValueError) as exc:
        if isinstance(exc, NumericError):
            path = write_report(out, cfg, "numeric-failure", {"error": str(exc)})
            print(f"radplan: numeric failure: {exc}; report at {path}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"radplan: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    path = write_report(out, cfg, "ok", results)
    log.info("wrote %s", path)
    print(path)
    return EXIT_OK


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
