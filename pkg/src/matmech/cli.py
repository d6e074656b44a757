"""Command-line frontend: compile, optimize, analyze, run, bench."""

import argparse
import csv
import json
import sys

import numpy as np

from . import bench as bench_mod
from . import workload as wl
from .errors import (BlockError, CalibrationError, CompileError, ConfigError,
                     IngestionError, OptimizationError, ShapeError, SizeError,
                     SupportError)
from .mechanism import (DomainConfig, analytic_rmse, calibrate, measure,
                        reconstruct, vectorize_dataset, write_answers_csv,
                        write_metadata)
from .optimize import (OptConfig, OptResult, identity_strategy,
                       opt0_gaussian, opt0_laplace, opt_kron, opt_marginals,
                       opt_plus, workload_as_strategy)
from .strategy import load_strategy, normalized, save_strategy
from .workload import load_workload, save_workload

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_OPTIMIZATION = 3
EXIT_BENCH = 4

INPUT_ERRORS = (CompileError, IngestionError, BlockError, SizeError,
                ShapeError, ConfigError, CalibrationError, SupportError,
                json.JSONDecodeError, OSError, KeyError, ValueError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _noise_args(p):
    p.add_argument("--noise", choices=["laplace", "gaussian"], default="laplace")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=None)


def build_parser():
    parser = _Parser(prog="matmech",
                     description="Workload-adaptive private query answering "
                                 "over implicit Kronecker representations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a workload spec file")
    p.add_argument("--workload", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("optimize", help="select a measurement strategy")
    p.add_argument("--workload", required=True)
    _noise_args(p)
    p.add_argument("--operators", default="kron,plus,marginal",
                   help="comma list from kron,plus,marginal,opt0")
    p.add_argument("--restarts", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="compare strategies on a workload")
    p.add_argument("--workload", required=True)
    p.add_argument("--strategy", action="append", default=[])
    _noise_args(p)
    p.add_argument("--format", choices=["csv", "markdown"], default="markdown")

    p = sub.add_parser("run", help="answer a workload privately on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--strategy", required=True)
    _noise_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-noise", action="store_true",
                   help="test hook: skip noise addition")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="compare against stored reference targets")
    p.add_argument("--suite", choices=sorted(bench_mod.SUITES), required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_compile(args):
    w = load_workload(args.workload)
    save_workload(args.out, w)
    n = w.num_cols
    m = w.num_queries
    implicit = wl.implicit_storage_bytes(w)
    print(f"domain size N = {n}")
    print(f"terms k = {len(w.terms)}")
    print(f"queries m = {m}")
    print(f"implicit storage = {implicit} bytes "
          f"(explicit estimate {8 * m * n} bytes)")
    return EXIT_OK


def _resolved_noise(args):
    return calibrate(args.noise, args.epsilon, args.delta, seed=getattr(
        args, "seed", 0))


def cmd_optimize(args):
    w = load_workload(args.workload)
    _resolved_noise(args)  # validate epsilon/delta up front
    norm = "L1" if args.noise == "laplace" else "L2"
    cfg = OptConfig(restarts=args.restarts, seed=args.seed,
                    max_iters=args.max_iters)
    ops = [o.strip() for o in args.operators.split(",") if o.strip()]
    known = {"kron": opt_kron, "plus": opt_plus, "marginal": opt_marginals}
    results = []
    for op in ops:
        if op in known:
            results.append(known[op](w, cfg, norm))
        elif op == "opt0":
            gram_dense = wl.gram(w).dense()
            if norm == "L1":
                res = opt0_laplace(gram_dense, max(1, w.num_cols // 16), cfg)
            else:
                res = opt0_gaussian(gram_dense, cfg)
            results.append(res)
        else:
            raise ConfigError(f"unknown operator {op!r}")
    # baseline fallback: the meta-selection never returns worse than identity
    ident = identity_strategy(w.domain, norm)
    results.append(OptResult(strategy=ident,
                             unit_error=wl.unit_error(w, ident,
                                                      verify_support=False),
                             operator="identity"))
    q_wkld = wl.workload_strategy_error(w, norm)
    if q_wkld is not None:
        results.append(OptResult(strategy=None, unit_error=q_wkld,
                                 operator="workload"))
    best = min(results, key=lambda r: r.unit_error)
    if best.strategy is None:
        best.strategy = workload_as_strategy(w, norm)
    for r in results:
        bound = f" (svdb {r.svd_bound:.6g})" if r.svd_bound else ""
        print(f"{r.operator}: Q = {r.unit_error:.6g}{bound} "
              f"[{r.wallclock:.2f}s]")
    print(f"winner: {best.operator} with Q = {best.unit_error:.6g}")
    provenance = {"operator": best.operator, "seed": args.seed,
                  "restarts": args.restarts, "noise": args.noise,
                  "epsilon": args.epsilon}
    if args.delta is not None:
        provenance["delta"] = args.delta
    groups = best.details.get("groups")
    if groups is not None:
        provenance["groups"] = groups
    elif hasattr(best.strategy, "groups") and best.strategy.groups:
        provenance["groups"] = best.strategy.groups
    save_strategy(args.out, best.strategy, unit_error=best.unit_error,
                  provenance=provenance)
    print(f"strategy written to {args.out}")
    return EXIT_OK


def _noise_factor(noise):
    return 2.0 * noise.scale ** 2 if noise.mechanism == "laplace" \
        else noise.scale ** 2


def _q_row(name, q, noise, m):
    tse = _noise_factor(noise) * q
    return {"strategy": name, "q": q, "tse": tse,
            "rmse": float(np.sqrt(tse / m)), "bound": False, "error": None}


def cmd_analyze(args):
    w = load_workload(args.workload)
    noise = _resolved_noise(args)
    norm = "L1" if args.noise == "laplace" else "L2"
    m = w.num_queries
    rows = []

    def add_strategy_row(name, strat):
        try:
            rep = analytic_rmse(w, strat, noise)
            rows.append({"strategy": name, "q": rep.q, "tse": rep.tse,
                         "rmse": rep.rmse, "bound": rep.is_bound,
                         "error": None})
        except (SupportError, SizeError, ShapeError) as e:
            rows.append({"strategy": name, "q": None, "tse": None,
                         "rmse": None, "bound": False, "error": str(e)})

    add_strategy_row("identity", identity_strategy(w.domain, norm))
    q_wkld = wl.workload_strategy_error(w, norm)  # exact rank formula
    if q_wkld is not None:
        rows.append(_q_row("workload", q_wkld, noise, m))
    else:
        rows.append({"strategy": "workload", "q": None, "tse": None,
                     "rmse": None, "bound": False,
                     "error": "unavailable at this scale"})
    for path in args.strategy:
        strat, _ = load_strategy(path)
        add_strategy_row(path, normalized(strat))
    svdb = wl.svd_bound(w)
    if svdb is not None:
        rows.append(_q_row("svdb", svdb, noise, m))
    best = min((r["rmse"] for r in rows
                if r["rmse"] is not None and r["strategy"] != "svdb"),
               default=None)
    for r in rows:
        r["ratio_to_best"] = None if (r["rmse"] is None or best is None) \
            else r["rmse"] / best
    _print_table(rows, args.format)
    return EXIT_OK


def _print_table(rows, fmt):
    cols = ["strategy", "q", "tse", "rmse", "ratio_to_best"]

    def cell(r, c):
        v = r.get(c)
        if v is None:
            return "-" if r.get("error") is None else f"unsupported: {r['error']}"
        if isinstance(v, float):
            flag = "*" if c == "q" and r.get("bound") else ""
            return f"{v:.6g}{flag}"
        return str(v)

    if fmt == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([cell(r, c) for c in cols])
    else:
        table = [[cell(r, c) for c in cols] for r in rows]
        widths = [max(len(c), *(len(t[i]) for t in table))
                  for i, c in enumerate(cols)]
        line = "| " + " | ".join(c.ljust(w) for c, w in zip(cols, widths)) + " |"
        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        print(line)
        print(sep)
        for t in table:
            print("| " + " | ".join(c.ljust(w) for c, w in zip(t, widths)) + " |")
    if any(r.get("bound") for r in rows):
        print("(* = budget-split upper bound, not an exact expectation)")


def cmd_run(args):
    w = load_workload(args.workload)
    with open(args.domain) as f:
        cfg = DomainConfig.from_obj(json.load(f))
    if cfg.sizes != w.domain:
        raise CompileError(
            f"domain config sizes {cfg.sizes} do not match workload domain "
            f"{w.domain}")
    with open(args.dataset, newline="") as f:
        x = vectorize_dataset(csv.DictReader(f), cfg)
    strat, obj = load_strategy(args.strategy)
    strat = normalized(strat)
    noise = calibrate(args.noise, args.epsilon, args.delta, seed=args.seed)
    meas = measure(strat, x, noise, zero_noise=args.zero_noise)
    answers = reconstruct(strat, meas, w)
    write_answers_csv(args.out, w, answers)
    notes = {}
    if hasattr(strat, "subs"):
        notes["consistency"] = ("answers are locally least-squares per term "
                                "group and may disagree across groups")
    if args.zero_noise:
        notes["zero_noise"] = True
    write_metadata(args.out + ".meta.json", noise, args.seed,
                   obj.get("provenance", {}), notes=notes or None)
    print(f"wrote {answers.size} answers to {args.out}")
    return EXIT_OK


def cmd_bench(args):
    rows = bench_mod.run_suite(args.suite, seed=args.seed)
    print(bench_mod.format_rows(rows))
    failed = [r for r in rows if not r.ok]
    print(f"{len(rows) - len(failed)}/{len(rows)} rows within tolerance")
    return EXIT_BENCH if failed else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"compile": cmd_compile, "optimize": cmd_optimize,
                "analyze": cmd_analyze, "run": cmd_run, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except OptimizationError as e:
        print(f"optimization failed: {e}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
