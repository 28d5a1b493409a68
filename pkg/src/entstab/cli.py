"""Command-line scenario runner.

Each subcommand reads an optional flat ``key = value`` TOML config, runs one
experiment, and writes ``report.json`` plus CSV tables into ``--out``.

Exit status: 0 when every declared check passed, 1 when a check failed
(named on stderr), 2 for config or input-file errors, 3 for solver failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .exact_ot import TransportSolverError, solve_discrete_w2, write_plan
from .measures import (
    MeasureFormatError, grid_quadrature, make_discrete, random_ball_measure, read_measure,
    two_point_measure, uniform_ball,
)
from .semidiscrete import SemiDiscreteError, bias_ledger, semidiscrete_stability, solve_semidiscrete
from .sinkhorn import SinkhornError, SolverOptions, marginal_residual, solve_entropic, write_potentials
from .stability import chain_diagnostics, stability_report

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --- config schema -----------------------------------------------------------

REQUIRED = object()


@dataclass(frozen=True)
class Key:
    kind: str  # float | int | str | bool | floats
    default: object = REQUIRED
    positive: bool = False


SCHEMAS: dict[str, dict[str, Key]] = {
    "solve": {
        "source": Key("str"), "target": Key("str"), "epsilon": Key("float", positive=True),
        "tolerance": Key("float", 1e-10, True), "max_iterations": Key("int", 100_000, True),
        "exact": Key("bool", True),
    },
    "tightness": {
        "R": Key("float", 1.0, True), "epsilons": Key("floats", [0.25, 0.5, 1.0], True),
        "thetas": Key("floats", [0.05, 0.1, 0.2, 0.3], True), "tolerance": Key("float", 1e-12, True),
        "formula_atol": Key("float", 1e-6, True),
    },
    "stability": {
        "triples": Key("int", 200, True), "max_atoms": Key("int", 8, True), "dim": Key("int", 2, True),
        "R": Key("float", 1.0, True), "epsilons": Key("floats", [0.05, 0.5], True),
        "tolerance": Key("float", 1e-10, True),
    },
    "chain": {
        "triples": Key("int", 20, True), "max_atoms": Key("int", 8, True), "dim": Key("int", 2, True),
        "R": Key("float", 1.0, True), "epsilons": Key("floats", [0.1], True),
        "tolerance": Key("float", 1e-12, True),
    },
    "bias": {
        "resolution": Key("int", 256, True), "epsilons": Key("floats", [0.1, 0.05, 0.025, 0.0125], True),
        "mu_weights": Key("floats", [0.5, 0.5], True), "h_inflation": Key("float", 1.1, True),
        "bandwidth": Key("float", 0.05, True), "sd_tolerance": Key("float", 1e-2, True),
        "tolerance": Key("float", 1e-9, True),
    },
    "sdstab": {
        "resolution": Key("int", 256, True), "thetas": Key("floats", [0.4, 0.2, 0.1, 0.05], True),
        "sd_tolerance": Key("float", 1e-2, True), "tolerance": Key("float", 1e-9, True),
    },
}

SCENARIO_NAMES = {
    "solve": "solve", "tightness": "tightness-sweep", "stability": "stability-random",
    "chain": "chain-diagnostics", "bias": "bias-sweep", "sdstab": "semidiscrete-stability",
}


def _coerce(name: str, key: Key, value):
    def bad(expected):
        return ConfigError(f"config key {name!r}: expected {expected}, got {value!r}")

    if key.kind == "bool":
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if key.kind == "str":
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if key.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        out = [value]
    elif key.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        out = [float(value)]
    else:
        if not isinstance(value, list) or not value or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise bad("a non-empty list of numbers")
        out = [float(v) for v in value]
    if any(not math.isfinite(v) for v in out):
        raise bad("finite values")
    if key.positive and any(v <= 0 for v in out):
        raise ConfigError(f"config key {name!r} must be positive")
    return out if key.kind == "floats" else out[0]


def load_config(command: str, path: str | None, seed: int | None) -> dict:
    """Parse, validate and fill defaults. Unknown or missing keys are errors."""
    raw: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    schema = SCHEMAS[command]
    declared = raw.pop("scenario", SCENARIO_NAMES[command])
    if declared not in (command, SCENARIO_NAMES[command]):
        raise ConfigError(f"config declares scenario {declared!r} but the subcommand is {command!r}")
    cfg_seed = raw.pop("seed", 0)
    for name, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"config key {name!r}: nested tables are not allowed")
        if name not in schema:
            raise ConfigError(f"unknown config key {name!r} for scenario {command!r}")
    cfg = {}
    for name, key in schema.items():
        if name in raw:
            cfg[name] = _coerce(name, key, raw[name])
        elif key.default is REQUIRED:
            raise ConfigError(f"missing required config key {name!r} for scenario {command!r}")
        else:
            cfg[name] = key.default
    seed = cfg_seed if seed is None else seed
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    cfg["seed"] = seed
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    blob = json.dumps({"scenario": command, **cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- output --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for row in rows:
            writer.writerow([_fmt(v) for v in row.values()])
    path.write_text(buf.getvalue())


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


@dataclass
class RunResult:
    tables: dict[str, list[dict]]
    checks: dict[str, bool]
    summary: dict


def _pmap(fn, items, threads: int):
    """Ordered map; results do not depend on the thread count."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --- scenarios -------------------------------------------------------------------


def run_solve(cfg: dict, out: Path, threads: int) -> RunResult:
    rho, nu = read_measure(cfg["source"]), read_measure(cfg["target"])
    opts = SolverOptions(cfg["tolerance"], cfg["max_iterations"])
    p = solve_entropic(rho, nu, cfg["epsilon"], opts)
    write_potentials(p, out / "potentials.txt")
    resid = marginal_residual(p)
    summary = {"epsilon": cfg["epsilon"], "iterations": p.iterations, "sinkhorn_residual": p.residual,
               "marginal_residual": resid}
    checks = {"marginal_residual <= 100 tolerance": resid <= 100 * cfg["tolerance"]}
    if cfg["exact"]:
        plan = solve_discrete_w2(rho, nu)
        write_plan(plan, out / "plan.csv")
        summary.update(w2=math.sqrt(max(plan.cost, 0.0)), pivots=plan.pivots,
                       certificate_gap=plan.certificate_gap())
    return RunResult({}, checks, summary)


def run_tightness(cfg: dict, out: Path, threads: int) -> RunResult:
    R = cfg["R"]
    opts = SolverOptions(cfg["tolerance"])
    rho = two_point_measure(R, math.pi / 2)
    mu = two_point_measure(R, 0.0)
    jobs = [(e, t) for e in cfg["epsilons"] for t in cfg["thetas"]]

    def one(job):
        eps, theta = job
        rep = stability_report(rho, mu, two_point_measure(R, theta), eps, R, opts, probe_hmax=False)
        formula = R * math.tanh(R * math.sin(theta) / eps)
        return {"epsilon": eps, "theta": theta, "lhs": rep.lhs, "formula": formula,
                "abs_error": abs(rep.lhs - formula), "w2": rep.w2, "ratio": rep.lhs / rep.w2,
                "rhs_bounded": rep.rhs_bounded, "rhs_general": rep.rhs_general}

    rows = _pmap(one, jobs, threads)
    checks = {
        "lhs = R tanh(R sin(theta)/eps)": all(r["abs_error"] <= cfg["formula_atol"] for r in rows),
        "lhs <= (1 + 2 R^2/eps) W2": all(r["lhs"] <= r["rhs_bounded"] * (1 + 1e-12) for r in rows),
    }
    return RunResult({"tightness.csv": rows}, checks,
                     {"max_abs_error": max(r["abs_error"] for r in rows), "rows": len(rows)})


def _random_triples(cfg: dict):
    rng = np.random.default_rng(cfg["seed"])
    triples = []
    for _ in range(cfg["triples"]):
        sizes = rng.integers(1, cfg["max_atoms"] + 1, size=3)
        triples.append(tuple(random_ball_measure(rng, int(n), cfg["dim"], cfg["R"]) for n in sizes))
    return triples


def run_stability(cfg: dict, out: Path, threads: int) -> RunResult:
    opts = SolverOptions(cfg["tolerance"])
    jobs = [(k, tr, e) for k, tr in enumerate(_random_triples(cfg)) for e in cfg["epsilons"]]

    def one(job):
        k, (rho, mu, nu), eps = job
        rep = stability_report(rho, mu, nu, eps, cfg["R"], opts, probe_hmax=False)
        return {"triple": k, "epsilon": eps, "lhs": rep.lhs, "w2": rep.w2, "rhs_bounded": rep.rhs_bounded,
                "rhs_general": rep.rhs_general, "bounded_holds": rep.lhs <= rep.rhs_bounded + 1e-12,
                "general_holds": rep.lhs <= rep.rhs_general + 1e-12}

    rows = _pmap(one, jobs, threads)
    checks = {
        "lhs <= (1 + 2 R^2/eps) W2": all(r["bounded_holds"] for r in rows),
        "lhs <= (1 + 2 sqrt(H_phi H_psi)/eps) W2": all(r["general_holds"] for r in rows),
    }
    worst = max((r["lhs"] / r["rhs_bounded"] for r in rows if r["rhs_bounded"] > 0), default=0.0)
    return RunResult({"stability.csv": rows}, checks, {"rows": len(rows), "max_lhs_over_rhs": worst})


def run_chain(cfg: dict, out: Path, threads: int) -> RunResult:
    opts = SolverOptions(cfg["tolerance"])
    jobs = [(k, tr, e) for k, tr in enumerate(_random_triples(cfg)) for e in cfg["epsilons"]]

    def one(job):
        k, (rho, mu, nu), eps = job
        diag = chain_diagnostics(rho, mu, nu, eps, R=cfg["R"], opts=opts)
        row = {"triple": k}
        row.update(diag.as_dict())
        row.update(diag.checks())
        return row

    rows = _pmap(one, jobs, threads)
    names = ["I_nonnegative", "jensen", "I_tilde_nonnegative", "step2_identity", "step3", "step1"]
    checks = {name: all(r[name] for r in rows) for name in names}
    return RunResult({"chain.csv": rows}, checks, {"rows": len(rows)})


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_bias(cfg: dict, out: Path, threads: int) -> RunResult:
    grid = grid_quadrature(uniform_ball(1.0, 2), cfg["resolution"])
    w = cfg["mu_weights"]
    if len(w) != 2:
        raise ConfigError("config key 'mu_weights' must have two entries")
    mu = make_discrete([(1.0, 0.0), (-1.0, 0.0)], w)
    sol = solve_semidiscrete(grid, mu, cfg["sd_tolerance"])
    opts = SolverOptions(cfg["tolerance"])

    def one(eps):
        led = bias_ledger(grid, mu, eps, sol, opts, bandwidth=cfg["bandwidth"], h_inflation=cfg["h_inflation"])
        row = led.as_dict()
        row["bias_sq"] = led.bias_l2 ** 2
        row["bound_holds"] = row["bias_sq"] <= led.rhs_prelim
        return row

    rows = _pmap(one, cfg["epsilons"], threads)
    summary = {"rows": len(rows), "sd_residual": sol.residual}
    if len(rows) >= 2:
        summary["slope"] = _loglog_slope([r["epsilon"] for r in rows], [r["bias_l2"] for r in rows])
    checks = {"bias_l2^2 <= rhs_prelim": all(r["bound_holds"] for r in rows)}
    return RunResult({"bias.csv": rows}, checks, summary)


def rotating_family_oracle(theta: float) -> float:
    """Exact ``||T_0^{mu_0} - T_0^{mu_theta}||`` for the uniform disk and symmetric pairs."""
    frac = theta / math.pi
    return math.sqrt(frac * 4 * math.cos(theta / 2) ** 2 + (1 - frac) * 4 * math.sin(theta / 2) ** 2)


def run_sdstab(cfg: dict, out: Path, threads: int) -> RunResult:
    grid = grid_quadrature(uniform_ball(1.0, 2), cfg["resolution"])
    mu0 = two_point_measure(1.0, 0.0)
    opts = SolverOptions(cfg["tolerance"])

    def one(theta):
        st = semidiscrete_stability(grid, mu0, two_point_measure(1.0, theta), "w2", cfg["sd_tolerance"], opts)
        row = {"theta": theta}
        row.update(st.as_dict())
        row["oracle"] = rotating_family_oracle(theta)
        row["wedge_formula"] = 2.0 * math.sqrt(theta / math.pi)
        row["triangle_holds"] = st.lhs <= st.decomposition_sum + 1e-12
        return row

    rows = _pmap(one, cfg["thetas"], threads)
    ratios = [r["ratio"] for r in rows]
    checks = {"lhs <= bias_mu + bias_nu + entropic_term": all(r["triangle_holds"] for r in rows)}
    return RunResult({"sdstab.csv": rows}, checks,
                     {"rows": len(rows), "ratio_spread": max(ratios) / min(ratios)})


RUNNERS = {"solve": run_solve, "tightness": run_tightness, "stability": run_stability,
           "chain": run_chain, "bias": run_bias, "sdstab": run_sdstab}


def run_scenario(command: str, cfg: dict, out: Path, threads: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    result = RUNNERS[command](cfg, out, threads)
    for name, rows in result.tables.items():
        write_table(out / name, rows)
    failed = [name for name, ok in result.checks.items() if not ok]
    report = {
        "scenario": SCENARIO_NAMES[command], "version": __version__,
        "config_hash": config_hash(command, cfg), "config": cfg,
        "checks": result.checks, "violations": failed, "summary": result.summary,
        "tables": sorted(result.tables),
    }
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    for name in failed:
        print(f"invariant violated: {name}", file=sys.stderr)
    return EXIT_INVARIANT if failed else EXIT_OK


# --- plot data -----------------------------------------------------------------


def emit_plotdata(table: Path, x: str, ys: list[str], transform: str, out: Path) -> int:
    """Write whitespace-separated columns ``x y1 y2 ...`` for gnuplot.

    In ``log-log`` mode rows with a nonpositive entry are dropped (with a
    warning) and a trailing comment reports the least-squares slope of each
    ``y`` against ``x``.
    """
    if transform not in ("linear", "log-log"):
        raise ConfigError(f"unknown transform {transform!r}")
    text = table.read_text() if table.exists() else None
    if text is None:
        raise ConfigError(f"cannot read table {table}")
    reader = list(csv.reader(io.StringIO(text)))
    if not reader:
        warnings.warn(f"{table} is empty; writing an empty data file", stacklevel=2)
        out.write_text("")
        return EXIT_OK
    header, body = reader[0], reader[1:]
    missing = [c for c in [x, *ys] if c not in header]
    if missing:
        raise ConfigError(f"missing column(s) {', '.join(missing)} in {table}")
    idx = [header.index(c) for c in [x, *ys]]
    try:
        data = np.array([[float(row[k]) for k in idx] for row in body], dtype=float).reshape(len(body), len(idx))
    except ValueError:
        raise ConfigError(f"non-numeric value in columns {x}, {', '.join(ys)} of {table}") from None
    lines = [f"# {' '.join([x, *ys])}"]
    if transform == "log-log":
        keep = np.all(data > 0, axis=1)
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            warnings.warn(f"dropped {dropped} row(s) with nonpositive entries", stacklevel=2)
        data = np.log10(data[keep])
    lines += [" ".join(repr(float(v)) for v in row) for row in data]
    if transform == "log-log" and len(data) >= 2:
        slopes = [float(np.polyfit(data[:, 0], data[:, k], 1)[0]) for k in range(1, data.shape[1])]
        lines.append("# slope " + " ".join(f"{c}={s!r}" for c, s in zip(ys, slopes)))
    out.write_text("\n".join(lines) + "\n")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entstab", description="Entropic OT stability experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {SCENARIO_NAMES[name]} scenario")
        p.add_argument("--config", help="flat key = value TOML file")
        p.add_argument("--out", default=f"out/{name}", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for independent rows")
    p = sub.add_parser("plotdata", help="convert a CSV table to gnuplot data")
    p.add_argument("table")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True, help="comma-separated column names")
    p.add_argument("--transform", choices=["linear", "log-log"], default="linear")
    p.add_argument("--out", required=True, help="output data file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plotdata":
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                code = emit_plotdata(Path(args.table), args.x, [c for c in args.y.split(",") if c],
                                     args.transform, Path(args.out))
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            return code
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.command, args.config, args.seed)
        return run_scenario(args.command, cfg, Path(args.out), args.threads)
    except (ConfigError, MeasureFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SinkhornError, TransportSolverError, SemiDiscreteError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
