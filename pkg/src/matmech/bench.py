"""Benchmark suites comparing measured errors against stored targets."""

import math
import time
from dataclasses import dataclass

from . import bench_targets as targets
from . import workload as wl
from .blocks import AllRange, Permuted, Prefix, Total, WidthRange
from .mechanism import analytic_rmse, calibrate
from .optimize import (OptConfig, identity_strategy, opt0_gaussian,
                       opt0_laplace, opt_kron, opt_marginals, opt_plus)


@dataclass
class BenchRow:
    name: str
    measured: float
    target: float
    tolerance: str
    ok: bool


def _rel_row(name, measured, target, rtol):
    ok = abs(measured - target) <= rtol * abs(target)
    return BenchRow(name, measured, target, f"+-{rtol:g} rel", ok)


def _cap_row(name, measured, cap):
    return BenchRow(name, measured, cap, "<= target", measured <= cap)


def suite_worked_example(seed=0):
    spec = targets.WORKED_EXAMPLE
    t0 = time.time()
    domain = spec["domain"]
    w = wl.all_k_way_marginals(domain, 2)
    cfg = OptConfig(restarts=25, seed=seed)
    measured = {
        "identity": wl.unit_error(w, identity_strategy(domain, "L1"),
                                  verify_support=False),
        "workload": wl.workload_strategy_error(w, "L1"),
        "kron": opt_kron(w, cfg, "L1").unit_error,
        "plus": opt_plus(w, cfg, "L1").unit_error,
        "marginal": opt_marginals(w, cfg, "L1").unit_error,
    }
    rows = [_rel_row(name, measured[name], target, rtol)
            for name, target, rtol in spec["rows"]]
    rows.append(_cap_row("wallclock_seconds", time.time() - t0,
                         spec["max_seconds"]))
    return rows


def _one_d_family(name, n):
    block = {"allrange": lambda: AllRange(n),
             "prefix": lambda: Prefix(n),
             "width32": lambda: WidthRange(n, 32),
             "permuted": lambda: Permuted(AllRange(n), targets.PERMUTED_SEED),
             }[name]()
    return wl.impvec([(1.0, [block])], (n,))


def suite_1d(seed=0, noise="both"):
    rows = []
    if noise in ("both", "laplace"):
        rows.extend(_suite_1d_laplace(seed))
    if noise in ("both", "gaussian"):
        rows.extend(_suite_1d_gaussian(seed))
    return rows


def _suite_1d_laplace(seed):
    spec = targets.ONE_D_LAPLACE
    noise = calibrate("laplace", 1.0)
    rows = []
    for n in spec["sizes"]:
        t0 = time.time()
        w = _one_d_family("allrange", n)
        m = w.num_queries
        ident = analytic_rmse(w, identity_strategy((n,), "L1"), noise)
        rows.append(_rel_row(f"laplace/allrange/{n}/identity_rmse",
                             ident.rmse, spec["identity_rmse"][n],
                             spec["identity_rtol"]))
        svdb = wl.svd_bound(w)
        svdb_rmse = math.sqrt(2.0 * noise.scale ** 2 * svdb / m)
        rows.append(_rel_row(f"laplace/allrange/{n}/svdb_rmse",
                             svdb_rmse, spec["svdb_rmse"][n],
                             spec["svdb_rtol"]))
        cfg = OptConfig(restarts=25, seed=seed)
        res = opt0_laplace(w.terms[0].factor_grams()[0], max(1, n // 16), cfg)
        opt_rmse = math.sqrt(2.0 * noise.scale ** 2 * res.unit_error / m)
        rows.append(_cap_row(f"laplace/allrange/{n}/opt0_rmse", opt_rmse,
                             spec["opt0_headroom"] * spec["opt0_rmse"][n]))
        rows.append(_cap_row(f"laplace/allrange/{n}/wallclock_seconds",
                             time.time() - t0, spec["max_seconds_per_size"]))
    return rows


def _suite_1d_gaussian(seed):
    spec = targets.ONE_D_GAUSSIAN
    rows = []
    cfg = OptConfig(seed=seed, max_iters=1000)
    q_unpermuted = {}
    for n in spec["sizes"]:
        for fam in spec["families"]:
            w = _one_d_family(fam, n)
            gram = w.terms[0].factor_grams()[0]
            svdb = wl.svd_bound(w)
            res = opt0_gaussian(gram, cfg)
            ratio = math.sqrt(res.unit_error / svdb)
            rows.append(_cap_row(f"gaussian/{fam}/{n}/opt0_rmse_over_svdb",
                                 ratio, spec["rmse_vs_svdb_cap"]))
            if fam == "allrange":
                q_unpermuted[n] = res.unit_error
            elif fam == "permuted":
                rel = abs(res.unit_error - q_unpermuted[n]) / q_unpermuted[n]
                rows.append(_cap_row(f"gaussian/permuted/{n}/q_match_allrange",
                                     rel, spec["permuted_match_rtol"]))
    return rows


def suite_marginals(seed=0):
    spec = targets.MARGINALS_RATIOS
    domain = spec["domain"]
    rows = []
    for k, expected, rtol in spec["rows"]:
        w = wl.all_k_way_marginals(domain, k)
        q_ident = wl.unit_error(w, identity_strategy(domain, "L1"),
                                verify_support=False)
        res = opt_marginals(w, OptConfig(restarts=25, seed=seed), "L1")
        ratio = math.sqrt(q_ident / res.unit_error)
        rows.append(_rel_row(f"marginals/d8/k{k}/identity_over_marginal_rmse",
                             ratio, expected, rtol))
    return rows


def suite_separation(seed=0):
    """Prefix-range cross products where a union strategy beats any single
    product (not wired to the CLI; exercised by the acceptance tests)."""
    spec = targets.SEPARATION
    n1, n2 = spec["domain"]
    w = wl.impvec([(1.0, [Prefix(n1), Total(n2)]),
                   (1.0, [Total(n1), Prefix(n2)])], spec["domain"])
    cfg = OptConfig(restarts=25, seed=seed)
    res_kron = opt_kron(w, cfg, "L1")
    res_plus = opt_plus(w, cfg, "L1")
    rows = [
        _rel_row("separation/kron_q", res_kron.unit_error, spec["kron_q"],
                 spec["q_rtol"]),
        _rel_row("separation/plus_q", res_plus.unit_error, spec["plus_q"],
                 spec["q_rtol"]),
        BenchRow("separation/kron_over_plus",
                 res_kron.unit_error / res_plus.unit_error,
                 spec["min_ratio"], ">= target",
                 res_kron.unit_error / res_plus.unit_error >= spec["min_ratio"]),
    ]
    return rows


SUITES = {
    "worked-example": suite_worked_example,
    "1d": suite_1d,
    "marginals": suite_marginals,
}


def run_suite(name, seed=0):
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed=seed)


def format_rows(rows):
    lines = []
    for r in rows:
        status = "PASS" if r.ok else "FAIL"
        lines.append(f"{status}  {r.name}: measured={r.measured:.6g} "
                     f"target={r.target:.6g} ({r.tolerance})")
    return "\n".join(lines)
