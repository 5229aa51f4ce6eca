"""Command-line front end.

Exit codes: 0 success or all verdicts pass, 1 some verdict fails, 2 usage
error, 3 numeric or truncation failure.  Everything is written under
--out (default: $KARLIN_LIL_OUT or ./karlin_out) with stable file names.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import experiments as ex
from .exact_moments import (TruncationError, mean_binomial_exact, moments_poisson_exact,
                            var_binomial_exact)
from .report import ExperimentReport, dumps, manifest, svg_lines, to_csv, write_text
from .simulator import ConfigError, SimConfig, layout_for, simulate_binomial_path, \
    simulate_coupled, simulate_poisson_path
from .weights import WeightError, parse_family

OUT_ENV = "KARLIN_LIL_OUT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SUBCOMMANDS = ("constants", "moments", "simulate", "clt", "lil", "depoisson", "window", "ratio")

log = logging.getLogger("karlin_lil")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_j(text: str) -> list[int]:
    """'3', '1..5' or '1,2,4'."""
    out = []
    for part in str(text).split(","):
        if ".." in part:
            a, b = part.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or min(out) < 1:
        raise UsageError(f"bad --j {text!r}")
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--family", help="e.g. zipf:alpha=0.5, pipolylog:beta=2, "
                        "pistretch:sigma=1,lambda=0.5, alpha1logsq:c=1")
    common.add_argument("--j", default="1", help="j, a range a..b or a list a,b")
    common.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./karlin_out)")
    common.add_argument("--format", choices=("csv", "json", "svg"), default="csv")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--config", help="JSON file whose keys fill in missing flags")
    common.add_argument("--replay", help="report.json or manifest.json of an earlier run")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="karlin-lil", description="Small counts in the infinite occupancy scheme.")
    p.add_argument("--version", action="version", version=f"karlin-lil {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("constants", parents=[common], help="asymptotic constants table")

    s = sub.add_parser("moments", parents=[common], help="exact mean and variance")
    s.add_argument("--t", help="Poissonized times, comma separated")
    s.add_argument("--n", help="ball counts, comma separated (deterministic scheme)")
    s.add_argument("--kind", choices=("exactly", "atleast"), default="exactly")
    s.add_argument("--k-cap", type=int, default=20000)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo paths")
    s.add_argument("--grid", required=False, help="geometric:t0:t1:count or comma list")
    s.add_argument("--scheme", choices=("poisson", "binomial", "coupled"), default="poisson")
    s.add_argument("-M", "--replicates", type=int, default=100)

    s = sub.add_parser("clt", parents=[common], help="KS check of the normal limit")
    s.add_argument("--t", type=float, default=1e6)
    s.add_argument("-M", "--replicates", type=int, default=5000)

    s = sub.add_parser("lil", parents=[common], help="LIL path properties")
    s.add_argument("--grid", default="geometric:1e2:1e10:30")
    s.add_argument("-M", "--replicates", type=int, default=200)
    s.add_argument("--scheme", choices=("poisson", "coupled"), default="poisson")

    s = sub.add_parser("depoisson", parents=[common], help="fixed-n versus Poissonized moments")
    s.add_argument("--n", default="100,1000,10000")
    s.add_argument("--k-cap", type=int, default=20000)

    s = sub.add_parser("window", parents=[common], help="variance share of the window")
    s.add_argument("--t", default="1e2,1e4,1e6,1e8")

    s = sub.add_parser("ratio", parents=[common], help="exact moments over asymptotics")
    s.add_argument("--grid", default="geometric:1e4:1e10:7")
    s.add_argument("--kind", choices=("exactly", "atleast"), default="exactly")
    s.add_argument("--tol", type=float, default=None)
    return p


def _grid(text: str, model, j):
    if text is None:
        raise UsageError("--grid is required")
    if ":" in text:
        try:
            return ex.parse_grid(text)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return _floats(text)


def _resolved(args) -> dict:
    skip = {"config", "replay", "verbose", "threads", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _apply_config(args, parser_defaults: dict) -> None:
    """Fill flags left at their defaults from --config or --replay."""
    src = args.replay or args.config
    if not src:
        return
    data = json.loads(Path(src).read_text())
    if "experiment" in data and "verdicts" in data:  # a report: use the manifest next to it
        data = json.loads((Path(src).parent / "manifest.json").read_text())
    if "config" in data and "command" in data:  # manifest
        data = data["config"]
    for k, v in data.items():
        if hasattr(args, k) and k not in ("config", "replay", "command"):
            if args.replay or getattr(args, k) == parser_defaults.get(k):
                setattr(args, k, v)


class _Ctx:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out or os.environ.get(OUT_ENV) or "karlin_out")
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def write(self, name: str, text: str) -> None:
        self.files.append(write_text(self.out / name, text))

    def table(self, name: str, rows: list[dict]) -> None:
        fmt = self.args.format
        if fmt == "json":
            self.write(f"{name}.json", dumps(rows))
        else:
            self.write(f"{name}.csv", to_csv(rows))


def _family(args):
    if not args.family:
        raise UsageError("--family is required")
    return parse_family(args.family)


def cmd_constants(ctx, args) -> int:
    model = _family(args)
    reg = model.regime_info()
    rows = []
    for j in parse_j(args.j):
        spec = asy.lil_spec(model, j)
        row = {"family": model.spec_string(), "regime": reg.kind, "j": j,
               "mean_constant": asy.mean_constant(reg, j), "var_constant": asy.var_constant(reg, j),
               "scale": asy.scale_function(model, j).name}
        if reg.kind == "RegVar":
            row["c_j_alpha"] = asy.c_j_alpha(j, reg.alpha)
        bm, bv = asy.big_counts_constants(reg, j)
        row.update({"big_mean_constant": bm, "big_var_constant": bv,
                    "normalizer": spec.normalizer_kind, "lil_constant": spec.lil_constant,
                    "mu": spec.mu, "q": spec.q, "upper_bound_only": spec.upper_bound_only})
        rows.append(row)
    ctx.table("constants", rows)
    return EXIT_OK


def cmd_moments(ctx, args) -> int:
    model = _family(args)
    rows = []
    for j in parse_j(args.j):
        for t in _floats(args.t) if args.t else []:
            m, v = moments_poisson_exact(model, j, t, kind=args.kind)
            rows.append({"scheme": "poisson", "j": j, "t": t, "kind": args.kind, "mean": m.to_json(),
                         "var": v.to_json()})
        for n in _floats(args.n) if args.n else []:
            m = mean_binomial_exact(model, j, int(n))
            v = var_binomial_exact(model, j, int(n), k_cap=args.k_cap)
            rows.append({"scheme": "binomial", "j": j, "n": int(n), "kind": "exactly",
                         "mean": m.to_json(), "var": {**v.to_json(), "status": v.status}})
    if not rows:
        raise UsageError("give --t and/or --n")
    if args.format == "csv":
        flat = [{k: v for k, v in r.items() if k not in ("mean", "var")}
                | {"mean": r["mean"]["value"], "mean_error": r["mean"]["error_bound"],
                   "var": r["var"]["value"], "var_error": r["var"]["error_bound"],
                   "k_truncation": max(r["mean"]["k_truncation"], r["var"]["k_truncation"])}
                for r in rows]
        ctx.table("moments", flat)
    else:
        ctx.write("moments.json", dumps(rows))
    return EXIT_OK


def cmd_simulate(ctx, args) -> int:
    model = _family(args)
    js = parse_j(args.j)
    g = _grid(args.grid, model, js[0])
    values = g.values(model, js[0]) if hasattr(g, "values") else np.asarray(g)
    if args.scheme != "poisson":
        values = np.unique(np.floor(values))
    cfg = SimConfig(model, tuple(float(x) for x in values), j_max=max(js), replicates=args.replicates,
                    seed=args.seed, threads=args.threads)
    rows = []
    if args.scheme == "coupled":
        for det, poi in simulate_coupled(cfg):
            for path, tag in ((det, "binomial"), (poi, "poisson")):
                rows.extend({"scheme": tag, **r} for r in path.rows() if r["j"] in js)
        lay = layout_for(cfg, cfg.grid[-1] + 10 * cfg.grid[-1] ** 0.5 + 20)
    else:
        fn = simulate_poisson_path if args.scheme == "poisson" else simulate_binomial_path
        for path in fn(cfg):
            rows.extend(r for r in path.rows() if r["j"] in js)
        lay = layout_for(cfg)
    ctx.table("paths", rows)
    ctx.write("certificate.json", dumps(lay.certificate()))
    return EXIT_OK


def _report(ctx, rep: ExperimentReport, svg=None) -> int:
    ctx.write("report.json", dumps(rep.to_json()))
    for name, rows in rep.tables.items():
        ctx.table(name, rows)
    if ctx.args.format == "svg" and svg:
        ctx.write("plot.svg", svg)
    for k, v in rep.verdicts.items():
        print(f"{rep.experiment} {k}: {v['verdict']} ({v['detail']})")
    log.info("runtime %.2fs", rep.runtime)
    return EXIT_FAIL if rep.overall == "fail" else EXIT_OK


def _one_j(args) -> int:
    js = parse_j(args.j)
    if len(js) != 1:
        raise UsageError("this subcommand takes a single --j")
    return js[0]


def cmd_clt(ctx, args) -> int:
    model = _family(args)
    rep = ex.clt_check(model, _one_j(args), args.t, args.replicates, seed=args.seed,
                       threads=args.threads)
    return _report(ctx, rep)


def cmd_lil(ctx, args) -> int:
    model = _family(args)
    j = _one_j(args)
    g = _grid(args.grid, model, j)
    rep = ex.lil_paths(model, j, g, args.replicates, seed=args.seed, threads=args.threads,
                       scheme=args.scheme)
    env = rep.tables["envelope"]
    use = [r for r in env if r["usable"]]
    c = rep.config["lil_spec"]["lil_constant"]
    svg = svg_lines({"R max": ([r["t"] for r in use], [r["R_max"] for r in use]),
                     "R min": ([r["t"] for r in use], [r["R_min"] for r in use]),
                     "+const": ([r["t"] for r in use], [c for _ in use]),
                     "-const": ([r["t"] for r in use], [-c for _ in use])}, y_label="R(t)")
    return _report(ctx, rep, svg)


def cmd_depoisson(ctx, args) -> int:
    model = _family(args)
    rep = ex.depoissonization_check(model, _one_j(args), [int(x) for x in _floats(args.n)],
                                    args.k_cap)
    return _report(ctx, rep)


def cmd_window(ctx, args) -> int:
    model = _family(args)
    rep = ex.variance_window(model, _one_j(args), _floats(args.t))
    rows = rep.tables["window"]
    svg = svg_lines({"fraction": ([r["t"] for r in rows], [r["fraction"] for r in rows])},
                    y_label="variance share")
    return _report(ctx, rep, svg)


def cmd_ratio(ctx, args) -> int:
    model = _family(args)
    j = _one_j(args)
    rep = ex.ratio_convergence(model, j, _grid(args.grid, model, j), kind=args.kind, tol=args.tol)
    rows = [r for r in rep.tables["ratios"] if r.get("status") == "ok"]
    svg = svg_lines({"mean ratio": ([r["t"] for r in rows], [r["mean_ratio"] for r in rows]),
                     "var ratio": ([r["t"] for r in rows], [r["var_ratio"] for r in rows])},
                    y_label="ratio")
    return _report(ctx, rep, svg)


COMMANDS = {"constants": cmd_constants, "moments": cmd_moments, "simulate": cmd_simulate,
            "clt": cmd_clt, "lil": cmd_lil, "depoisson": cmd_depoisson, "window": cmd_window,
            "ratio": cmd_ratio}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        sub_defaults = {a.dest: a.default
                        for a in parser._subparsers._group_actions[0].choices[args.command]._actions}
        _apply_config(args, sub_defaults)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        ctx = _Ctx(args)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](ctx, args)
        ctx.write("manifest.json", dumps(manifest(args.command, _resolved(args))))
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WeightError, ConfigError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TruncationError, ArithmeticError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
