"""Strategy selection: the low-dimensional optimizer and its three
high-dimensional drivers (single product, budgeted union, marginals), plus
the meta-selector that runs all of them and keeps the best.

All routines are deterministic given (workload, config seed); restarts are
independent and may run on a thread pool capped by HDMM_THREADS.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from . import marginals, workload as wl
from .errors import ConfigError, OptimizationError
from .kron import factor_error, max_col_norm
from .prng import SplitMix64, derive
from .strategy import (ExplicitStrategy, KronStrategy, MarginalStrategy,
                       UnionKronStrategy)


@dataclass
class OptConfig:
    restarts: int = 25
    seed: int = 0
    p_per_attr: list = None      # None: 1 for total/identity attrs, else n_i // 16
    max_iters: int = 100         # per restart (per L-BFGS round)
    gradient_tolerance: float = 1e-5
    pd_penalty: float = 1e12

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigError("need at least one restart")


@dataclass
class OptResult:
    strategy: object
    unit_error: float
    svd_bound: float = None
    iterations: int = 0
    restarts_used: int = 0
    wallclock: float = 0.0
    operator: str = ""
    details: dict = field(default_factory=dict)


def _max_workers(tasks):
    env = os.environ.get("HDMM_THREADS", "").strip()
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, tasks))


def _map_indexed(fn, count):
    """Run fn(0..count-1); result order (and thus tie-breaking) is by index."""
    workers = _max_workers(count)
    if workers == 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(count)))


# ---------------------------------------------------------------------------
# dense objective / gradient (reference path)

def objective_dense(a, gram_w):
    """tr[(A^T A)^+ (W^T W)] = ||W A+||_F^2 for supporting A."""
    ata = a.T @ a
    try:
        return float(np.trace(np.linalg.solve(ata, gram_w)))
    except np.linalg.LinAlgError:
        return float(np.trace(np.linalg.pinv(ata) @ gram_w))


def gradient_dense(a, gram_w):
    """d/dA of objective_dense: -2 A (A^T A)^+ (W^T W) (A^T A)^+."""
    ata_pinv = np.linalg.pinv(a.T @ a)
    return -2.0 * a @ ata_pinv @ gram_w @ ata_pinv


# ---------------------------------------------------------------------------
# stacked-identity parameterization (L1 noise)

def pid_matrix(theta):
    """A(Theta) = [I; Theta] D with D = diag(1 + 1^T Theta)^-1.

    Unit L1 sensitivity and full column rank for any nonnegative Theta.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[1]
    s = 1.0 + theta.sum(axis=0)
    return np.vstack([np.eye(n), theta]) / s


def objective_pidentity(theta, gram_w):
    """Objective and gradient w.r.t. Theta, never forming an n x n inverse.

    Uses (A^T A)^-1 = D^-1 [I - Theta^T (I_p + Theta Theta^T)^-1 Theta] D^-1
    evaluated right-to-left, so one call costs O(p n^2).
    """
    theta = np.asarray(theta, dtype=float)
    p, n = theta.shape
    s = 1.0 + theta.sum(axis=0)
    gs = gram_w * s * s[:, None]                 # D^-1 G D^-1
    m = np.eye(p) + theta @ theta.T
    tg = theta @ gs
    minv_tg = np.linalg.solve(m, tg)
    value = float(np.trace(gs) - (theta * minv_tg).sum())
    # X' = (A^T A)^-1 G (A^T A)^-1, assembled as D^-1 (R gs R) D^-1
    a1 = theta.T @ minv_tg
    mt = np.linalg.solve(m, theta)
    rgr = gs - a1 - a1.T + mt.T @ (tg @ theta.T) @ mt
    xp = rgr * s * s[:, None]
    ty = theta @ (xp / s[:, None])               # Theta D X'
    v = (np.diag(xp) / s + (theta * ty).sum(axis=0)) / s ** 2
    grad = -2.0 * ty / s + 2.0 * v
    return value, grad


def _pid_restart_inits(n, p, cfg):
    """Restart 0 is Theta = 0 (identity strategy); the rest draw from the
    seed-derived stream."""
    stream = SplitMix64(cfg.seed)
    inits = [np.zeros(p * n)]
    for _ in range(cfg.restarts - 1):
        inits.append(stream.uniform(p * n) / p)
    return inits


def opt0_laplace(gram_w, p, cfg):
    """Best-of-restarts minimization over stacked-identity strategies."""
    t0 = time.time()
    gram_w = np.asarray(gram_w, dtype=float)
    n = gram_w.shape[0]
    p = max(1, int(p))
    inits = _pid_restart_inits(n, p, cfg)
    bounds = [(0.0, None)] * (p * n)

    def run(i):
        def fg(x):
            val, grad = objective_pidentity(x.reshape(p, n), gram_w)
            return val, grad.ravel()
        res = minimize(fg, inits[i], jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": cfg.max_iters,
                                "ftol": cfg.gradient_tolerance * 1e-2,
                                "maxcor": 10})
        return res.fun, res.x, res.nit

    runs = _map_indexed(run, cfg.restarts)
    best = min(range(cfg.restarts), key=lambda i: runs[i][0])
    q, x, _ = runs[best]
    theta = x.reshape(p, n)
    strat = ExplicitStrategy(pid_matrix(theta), "L1", pid_theta=theta)
    return OptResult(strategy=strat, unit_error=float(q),
                     svd_bound=wl._factor_svdb(gram_w),
                     iterations=sum(r[2] for r in runs),
                     restarts_used=cfg.restarts, wallclock=time.time() - t0,
                     operator="opt0", details={"p": p, "norm": "L1"})


# ---------------------------------------------------------------------------
# convex Gram parameterization (L2 noise)

GAUSS_ROUNDS = 10
RIDGE_SCALE = 1e-8


def opt0_gaussian(gram_w, cfg):
    """Minimize tr[X^-1 G] over symmetric X with unit diagonal.

    Off-diagonal lower-triangle entries are the free parameters; X not
    positive definite returns cfg.pd_penalty.  Initialized at the square-root
    spectrum of G (rescaled to unit diagonal) and polished over several
    quasi-Newton rounds since the problem, while convex, is ill-conditioned.
    """
    t0 = time.time()
    g = np.asarray(gram_w, dtype=float)
    n = g.shape[0]
    lam, vec = np.linalg.eigh(g)
    lam = np.clip(lam, 0.0, None)
    if lam[0] < 1e-12 * max(lam[-1], 1e-300):
        g = g + np.eye(n) * (RIDGE_SCALE * np.trace(g) / n)
        lam, vec = np.linalg.eigh(g)
        lam = np.clip(lam, 0.0, None)
    x0 = (vec * np.sqrt(lam)) @ vec.T
    d = np.sqrt(np.diag(x0))
    x0 = x0 / np.outer(d, d)
    iu = np.tril_indices(n, -1)

    def unpack(x):
        mat = np.eye(n)
        mat[iu] = x
        mat.T[iu] = x
        return mat

    def fg(x):
        mat = unpack(x)
        try:
            factor = cho_factor(mat, lower=True)
        except np.linalg.LinAlgError:
            return cfg.pd_penalty, np.zeros_like(x)
        solved = cho_solve(factor, g)
        grad_mat = -cho_solve(factor, solved.T).T
        return float(np.trace(solved)), 2.0 * grad_mat[iu]

    x = x0[iu]
    total_nit = 0
    prev = np.inf
    val = fg(x)[0]
    for _ in range(GAUSS_ROUNDS):
        res = minimize(fg, x, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.max_iters, "ftol": 1e-16,
                                "gtol": 1e-14, "maxcor": 20, "maxls": 100})
        x, val = res.x, res.fun
        total_nit += res.nit
        if prev - val <= 1e-9 * max(abs(val), 1.0):
            break
        prev = val
    xmat = unpack(x)
    try:
        lower = np.linalg.cholesky(xmat)
    except np.linalg.LinAlgError:
        raise OptimizationError("optimizer terminated at a non-positive-"
                                "definite Gram parameterization")
    a = lower.T
    a = a / np.sqrt((a * a).sum(axis=0))  # exact unit column norms
    strat = ExplicitStrategy(a, "L2")
    return OptResult(strategy=strat, unit_error=float(val),
                     svd_bound=wl._factor_svdb(np.asarray(gram_w, float)),
                     iterations=total_nit, restarts_used=1,
                     wallclock=time.time() - t0, operator="opt0",
                     details={"norm": "L2"})


def _opt0(gram_w, p, cfg, norm):
    if norm == "L1":
        return opt0_laplace(gram_w, p, cfg)
    return opt0_gaussian(gram_w, cfg)


# ---------------------------------------------------------------------------
# product workloads

def default_p(w):
    """1 for attributes whose sub-workloads are all totals/point queries,
    else n_i // 16 (at least 1)."""
    p_vec = []
    for i, n in enumerate(w.domain):
        plain = True
        for t in w.terms:
            if t.blocks is not None:
                plain = plain and t.blocks[i].is_total_identity()
            else:
                f = t.factors[i]
                ident = np.isclose(f.sum(axis=1), 1.0) & \
                    np.isclose((f != 0).sum(axis=1), 1.0)
                total = np.isclose(f, 1.0).all(axis=1)
                plain = plain and bool((ident | total).all())
            if not plain:
                break
        p_vec.append(1 if plain else max(1, n // 16))
    return p_vec


def _resolve_p(w, cfg):
    if cfg.p_per_attr is not None:
        if len(cfg.p_per_attr) != len(w.domain):
            raise ConfigError("p_per_attr length must match the attribute count")
        return [max(1, int(p)) for p in cfg.p_per_attr]
    return default_p(w)


def _block_coordinate(gramss, weights, p_vec, cfg, norm, scheme):
    """Cyclically re-optimize one attribute at a time on its surrogate Gram."""
    k = len(gramss)
    d = len(gramss[0])
    stream = SplitMix64(derive(cfg.seed, 7001 if scheme == "random" else 7002))
    factors = []
    ratios = np.empty((k, d))
    for i in range(d):
        n = gramss[0][i].shape[0]
        if scheme == "identity":
            a = np.eye(n)
        else:
            theta = stream.uniform(p_vec[i] * n).reshape(p_vec[i], n) / p_vec[i]
            a = pid_matrix(theta)
            if norm == "L2":
                a = a / max_col_norm(a, "L2")
        factors.append(a)
        for j in range(k):
            ratios[j, i] = factor_error(a, gramss[j][i])
    w2 = np.asarray(weights) ** 2
    trace = []
    iters = 0
    prev_q = np.inf
    for outer in range(5):
        for i in range(d):
            c2 = w2 * np.prod(np.delete(ratios, i, axis=1), axis=1)
            surrogate = sum(c2[j] * gramss[j][i] for j in range(k))
            sub_cfg = replace(cfg, seed=derive(cfg.seed, 100 * outer + i))
            res = _opt0(surrogate, p_vec[i], sub_cfg, norm)
            factors[i] = res.strategy.matrix
            iters += res.iterations
            for j in range(k):
                ratios[j, i] = factor_error(factors[i], gramss[j][i])
        q = float((w2 * np.prod(ratios, axis=1)).sum())
        trace.append(q)
        if prev_q - q < 1e-4 * max(q, 1e-300):
            break
        prev_q = q
    return trace[-1], factors, trace, iters


def opt_kron(w, cfg, noise):
    """Single Kronecker-product strategy for a (union of) product workload(s)."""
    t0 = time.time()
    norm = noise
    p_vec = _resolve_p(w, cfg)
    gramss = [t.factor_grams() for t in w.terms]
    weights = [t.weight for t in w.terms]
    if len(w.terms) == 1:
        per = []
        iters = 0
        for i in range(len(w.domain)):
            res = _opt0(gramss[0][i], p_vec[i],
                        replace(cfg, seed=derive(cfg.seed, i)), norm)
            per.append(res)
            iters += res.iterations
        q = weights[0] ** 2 * float(np.prod([r.unit_error for r in per]))
        strat = KronStrategy([r.strategy.matrix for r in per], norm)
        return OptResult(strategy=strat, unit_error=q,
                         svd_bound=wl.svd_bound(w), iterations=iters,
                         restarts_used=cfg.restarts, wallclock=time.time() - t0,
                         operator="kron",
                         details={"p": p_vec,
                                  "factor_errors": [r.unit_error for r in per]})
    best = None
    iters = 0
    for scheme in ("identity", "random"):
        q, factors, trace, nit = _block_coordinate(
            gramss, weights, p_vec, cfg, norm, scheme)
        iters += nit
        if best is None or q < best[0]:
            best = (q, factors, trace, scheme)
    q, factors, trace, scheme = best
    return OptResult(strategy=KronStrategy(factors, norm), unit_error=q,
                     svd_bound=wl.svd_bound(w), iterations=iters,
                     restarts_used=cfg.restarts, wallclock=time.time() - t0,
                     operator="kron",
                     details={"p": p_vec, "passes": trace, "init": scheme})


# ---------------------------------------------------------------------------
# unions of products

def budget_shares(errors, norm):
    """Privacy-budget split minimizing sum E_j / a_j^2 under the sensitivity
    normalization (sum a_j = 1 for L1, sum a_j^2 = 1 for L2)."""
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        raise ConfigError("group errors must be positive")
    if norm == "L1":
        a = (2.0 * e) ** (1.0 / 3.0)
        return a / a.sum()
    a = e ** 0.25
    return a / np.sqrt((a * a).sum())


def opt_plus(w, cfg, noise, grouping=None):
    """Union-of-products strategy: each term group optimized separately, then
    weighted by its budget share.  Reported Q is the sum E_j / a_j^2 bound."""
    t0 = time.time()
    k = len(w.terms)
    groups = grouping if grouping is not None else [[j] for j in range(k)]
    seen = sorted(i for g in groups for i in g)
    if any(len(g) == 0 for g in groups):
        raise ConfigError("empty strategy group")
    if seen != list(range(k)):
        raise ConfigError("groups must partition the workload terms")
    if len(groups) == 1:
        inner = opt_kron(w, cfg, noise)
        strat = UnionKronStrategy([1.0], [inner.strategy], noise, groups=groups)
        return OptResult(strategy=strat, unit_error=inner.unit_error,
                         svd_bound=inner.svd_bound, iterations=inner.iterations,
                         restarts_used=cfg.restarts, wallclock=time.time() - t0,
                         operator="plus",
                         details={"groups": groups, "shares": [1.0],
                                  "group_errors": [inner.unit_error]})
    subs = []
    errors = []
    iters = 0
    for gi, grp in enumerate(groups):
        sub_w = wl.ImplicitWorkload(w.domain, [w.terms[j] for j in grp])
        res = opt_kron(sub_w, replace(cfg, seed=derive(cfg.seed, 500 + gi)), noise)
        subs.append(res.strategy)
        errors.append(res.unit_error)
        iters += res.iterations
    shares = budget_shares(errors, noise)
    q = float((np.asarray(errors) / shares ** 2).sum())
    strat = UnionKronStrategy(shares.tolist(), subs, noise, groups=groups)
    return OptResult(strategy=strat, unit_error=q, svd_bound=wl.svd_bound(w),
                     iterations=iters, restarts_used=cfg.restarts,
                     wallclock=time.time() - t0, operator="plus",
                     details={"groups": groups, "shares": shares.tolist(),
                              "group_errors": errors})


# ---------------------------------------------------------------------------
# marginal strategies

THETA_TOP_FLOOR = 1e-8
SUPPORT_FALLBACK_WEIGHT = 1e-4


def _marginal_q(theta, w_vec, domain, norm):
    sens2 = float(theta.sum() ** 2) if norm == "L1" else float((theta ** 2).sum())
    t = marginals.xmat_pinv_apply(theta ** 2, w_vec, domain)
    return sens2 * float(np.prod(domain)) * float(t.sum())


def _marginal_objective(raw, w_vec, domain, norm, n_total, c):
    from scipy.linalg import solve_triangular
    k = raw.size
    d = len(domain)
    theta = raw ** 2
    theta[-1] += THETA_TOP_FLOOR
    x = marginals.xmat(theta ** 2, domain)
    t = solve_triangular(x, w_vec, lower=False)
    g = float(t.sum())
    s = solve_triangular(x, np.ones(k), lower=False, trans="T")
    # dg/du_a = -s^T X_a t with X_a[k,b] = c(a|b) [a&b = k]
    if d <= marginals.GRID_MAX_D:
        land, lor = marginals._mask_grids(d)
        dg = -(s[land] * c[lor] * t[None, :]).sum(axis=1)
    else:
        masks = np.arange(k)
        dg = np.array([-(s[a & masks] * c[a | masks] * t).sum() for a in masks])
    if norm == "L1":
        sens2 = theta.sum() ** 2
        dsens2 = 2.0 * theta.sum() * np.ones(k)
    else:
        sens2 = float((theta ** 2).sum())
        dsens2 = 2.0 * theta
    val = n_total * sens2 * g
    dtheta = n_total * (dsens2 * g + sens2 * dg * 2.0 * theta)
    return val, dtheta * 2.0 * raw


def _verify_marginal_support(theta, w_vec, domain):
    x = marginals.xmat(theta ** 2, domain)
    proj = marginals._annihilated_solve(x, x @ w_vec)
    scale = max(np.abs(w_vec).max(), 1e-300)
    return np.abs(proj - w_vec).max() <= 1e-6 * scale


def opt_marginals(w, cfg, noise):
    """Marginal-weight strategy via the 2^d-dimensional parameterization."""
    t0 = time.time()
    domain = marginals.check_domain(w.domain)
    d = len(domain)
    k = 2 ** d
    norm = noise
    w_vec = marginals.marginal_approx(wl.gram(w))
    try:
        bound = marginals.svdb_marginal(w_vec, domain)
    except Exception:
        bound = None
    n_total = float(np.prod(domain))

    closed = marginals.closed_form_theta(w_vec, domain)
    if noise == "L2" and closed is not None:
        theta = closed / np.sqrt((closed ** 2).sum())
        q = _marginal_q(theta, w_vec, domain, "L2")
        if bound is not None and abs(q - bound) <= 1e-6 * bound and \
                _verify_marginal_support(theta, w_vec, domain):
            strat = MarginalStrategy(domain, theta, "L2")
            return OptResult(strategy=strat, unit_error=q, svd_bound=bound,
                             iterations=0, restarts_used=0,
                             wallclock=time.time() - t0, operator="marginal",
                             details={"closed_form": True})

    c = marginals.characteristic_vector(domain)
    stream = SplitMix64(cfg.seed)
    # designated restart: the clipped closed-form weights
    inits = [np.sqrt(marginals.closed_form_init(w_vec, domain))]
    while len(inits) < cfg.restarts:
        inits.append(stream.uniform(k))

    def run(i):
        res = minimize(_marginal_objective, inits[i], jac=True,
                       args=(w_vec, domain, norm, n_total, c),
                       method="L-BFGS-B",
                       options={"maxiter": cfg.max_iters,
                                "ftol": cfg.gradient_tolerance * 1e-2})
        return res.fun, res.x, res.nit

    runs = _map_indexed(run, cfg.restarts)
    best = min(range(cfg.restarts), key=lambda i: runs[i][0])
    raw = runs[best][1]
    theta = raw ** 2
    theta[-1] += THETA_TOP_FLOOR
    if not _verify_marginal_support(theta, w_vec, domain):
        theta = theta.copy()
        theta[-1] += SUPPORT_FALLBACK_WEIGHT
        if not _verify_marginal_support(theta, w_vec, domain):
            raise OptimizationError(
                "marginal strategy does not support the workload even after "
                "reinforcing the full-table weight")
    theta = theta / theta.sum() if norm == "L1" else \
        theta / np.sqrt((theta ** 2).sum())
    q = _marginal_q(theta, w_vec, domain, norm)
    strat = MarginalStrategy(domain, theta, norm)
    return OptResult(strategy=strat, unit_error=q, svd_bound=bound,
                     iterations=sum(r[2] for r in runs),
                     restarts_used=cfg.restarts, wallclock=time.time() - t0,
                     operator="marginal", details={"closed_form": False})


# ---------------------------------------------------------------------------
# meta-selection

def identity_strategy(domain, norm):
    return KronStrategy([np.eye(n) for n in domain], norm)


def workload_as_strategy(w, norm):
    """The workload measured as its own strategy, as a normalized union."""
    subs = []
    shares = []
    for t in w.terms:
        sens = wl.sensitivity_norm(t, norm)
        factors = [f / max_col_norm(f, norm) for f in t.factors]
        subs.append(KronStrategy(factors, norm))
        shares.append(sens)
    total = sum(shares) if norm == "L1" else np.sqrt(sum(s * s for s in shares))
    return UnionKronStrategy([s / total for s in shares], subs, norm,
                             groups=[[j] for j in range(len(w.terms))])


def opt_hdmm(w, cfg, noise):
    """Run the product, union and marginal operators plus the two analytic
    baselines; return the lowest-Q result (ties keep the earlier operator)."""
    t0 = time.time()
    candidates = []
    failures = []
    for name, op in (("kron", opt_kron), ("plus", opt_plus),
                     ("marginal", opt_marginals)):
        try:
            candidates.append(op(w, cfg, noise))
        except Exception as e:  # noqa: BLE001 - every operator may decline
            failures.append(f"{name}: {e}")
    try:
        ident = identity_strategy(w.domain, noise)
        q_ident = wl.unit_error(w, ident, verify_support=False)
        candidates.append(OptResult(strategy=ident, unit_error=q_ident,
                                    operator="identity"))
    except Exception as e:
        failures.append(f"identity: {e}")
    q_wkld = wl.workload_strategy_error(w, noise)
    if q_wkld is not None:
        # strategy object built lazily: it materializes every term
        candidates.append(OptResult(strategy=None, unit_error=q_wkld,
                                    operator="workload"))
    if not candidates:
        raise OptimizationError("all operators failed: " + "; ".join(failures))
    best = min(candidates, key=lambda r: r.unit_error)
    if best.strategy is None:
        best.strategy = workload_as_strategy(w, noise)
    best.details = dict(best.details)
    best.details["per_operator"] = {r.operator: r.unit_error for r in candidates}
    best.details["winner"] = best.operator
    if failures:
        best.details["failures"] = failures
    best.wallclock = time.time() - t0
    if best.svd_bound is None:
        best.svd_bound = wl.svd_bound(w)
    return best
