"""Strategy variants: what gets measured under noise, and how it serializes.

Four shapes cover everything the optimizers produce: a dense matrix, a
single Kronecker product, a budget-weighted union of Kronecker products,
and a weight vector over marginals.  Every strategy carries the sensitivity
norm it was calibrated for and is normalized to unit sensitivity.
"""

import json

import numpy as np

from . import marginals
from .errors import ConfigError, ShapeError
from .kron import kron_matvec, max_col_norm


class ExplicitStrategy:
    def __init__(self, matrix, norm, pid_theta=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.norm = norm
        # parameter block of a p-identity strategy, kept for O(np) reconstruction
        self.pid_theta = None if pid_theta is None else np.asarray(pid_theta, float)

    @property
    def num_rows(self):
        return self.matrix.shape[0]

    @property
    def num_cols(self):
        return self.matrix.shape[1]

    def sensitivity(self):
        return max_col_norm(self.matrix, self.norm)

    def matvec(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def variant_obj(self):
        return {"explicit": self.matrix.tolist()}


class KronStrategy:
    def __init__(self, factors, norm):
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        self.norm = norm

    @property
    def num_rows(self):
        return int(np.prod([f.shape[0] for f in self.factors]))

    @property
    def num_cols(self):
        return int(np.prod([f.shape[1] for f in self.factors]))

    def sensitivity(self):
        s = 1.0
        for f in self.factors:
            s *= max_col_norm(f, self.norm)
        return s

    def matvec(self, x):
        return kron_matvec(self.factors, x)

    def full_column_rank(self):
        return all(np.linalg.matrix_rank(f) == f.shape[1] for f in self.factors)

    def variant_obj(self):
        return {"kron": [f.tolist() for f in self.factors]}


class UnionKronStrategy:
    """Budget-weighted union: group j measures share[j] * (its Kron product).

    `groups` maps each sub-strategy to the workload term indices it answers;
    when omitted, term j is answered by sub-strategy j.
    """

    def __init__(self, shares, subs, norm, groups=None):
        if len(shares) != len(subs) or not subs:
            raise ConfigError("unions need one share per sub-strategy")
        self.shares = [float(s) for s in shares]
        if any(s <= 0 for s in self.shares):
            raise ConfigError("budget shares must be positive")
        self.subs = [s if isinstance(s, KronStrategy) else KronStrategy(s, norm)
                     for s in subs]
        self.norm = norm
        self.groups = None if groups is None else [list(g) for g in groups]

    @property
    def num_rows(self):
        return sum(s.num_rows for s in self.subs)

    def sensitivity(self):
        per = [a * s.sensitivity() for a, s in zip(self.shares, self.subs)]
        if self.norm == "L1":
            return float(sum(per))
        return float(np.sqrt(sum(p * p for p in per)))

    def term_groups(self, num_terms):
        if self.groups is not None:
            return self.groups
        if num_terms != len(self.subs):
            raise ShapeError(
                f"{len(self.subs)} sub-strategies cannot answer {num_terms} "
                f"workload terms without an explicit grouping")
        return [[j] for j in range(num_terms)]

    def variant_obj(self):
        return {"union": [{"share": a, "kron": [f.tolist() for f in s.factors]}
                          for a, s in zip(self.shares, self.subs)]}


class MarginalStrategy:
    def __init__(self, domain, theta, norm):
        self.domain = marginals.check_domain(domain)
        self.theta = np.asarray(theta, dtype=float)
        if self.theta.shape != (2 ** len(self.domain),):
            raise ShapeError("theta must have one weight per attribute subset")
        if self.theta.min() < 0:
            raise ConfigError("marginal strategy weights must be nonnegative")
        self.norm = norm

    @property
    def num_rows(self):
        return sum(r for _, r in marginals.marginal_sizes(self.domain, self.theta))

    @property
    def num_cols(self):
        return int(np.prod(self.domain))

    def sensitivity(self):
        if self.norm == "L1":
            return float(self.theta.sum())
        return float(np.sqrt((self.theta ** 2).sum()))

    def matvec(self, x):
        return marginals.matvec_m(self.theta, x, self.domain)

    def variant_obj(self):
        return {"marginal": {"type": "marginal",
                             "domain": list(self.domain),
                             "theta": self.theta.tolist()}}


def normalized(strategy):
    """Rescale to sensitivity exactly 1 (error quantities are scale-invariant)."""
    s = strategy.sensitivity()
    if s <= 0:
        raise ConfigError("strategy has zero sensitivity")
    if abs(s - 1.0) < 1e-15:
        return strategy
    if isinstance(strategy, ExplicitStrategy):
        # pid_theta describes the unscaled matrix; reconstruction re-detects
        # the stacked-identity shape, which survives column rescaling
        return ExplicitStrategy(strategy.matrix / s, strategy.norm)
    if isinstance(strategy, KronStrategy):
        factors = [f / max_col_norm(f, strategy.norm) for f in strategy.factors]
        return KronStrategy(factors, strategy.norm)
    if isinstance(strategy, MarginalStrategy):
        return MarginalStrategy(strategy.domain, strategy.theta / s, strategy.norm)
    if isinstance(strategy, UnionKronStrategy):
        subs = [normalized(sub) for sub in strategy.subs]
        shares = np.array(strategy.shares, dtype=float)
        if strategy.norm == "L1":
            shares = shares / shares.sum()
        else:
            shares = shares / np.sqrt((shares ** 2).sum())
        return UnionKronStrategy(shares.tolist(), subs, strategy.norm,
                                 groups=strategy.groups)
    raise TypeError(f"unknown strategy type {type(strategy).__name__}")


def pid_structure(matrix, rtol=1e-9):
    """Recover (column_scale, Theta) from a stacked-identity strategy matrix.

    Returns None unless the top n x n block is a positive diagonal, i.e. the
    matrix has the [I; Theta] D shape produced by the L1 optimizer.
    """
    m, n = matrix.shape
    if m < n:
        return None
    top = matrix[:n]
    diag = np.diag(top).copy()
    if diag.min() <= 0:
        return None
    if np.abs(top - np.diag(diag)).max() > rtol * diag.max():
        return None
    theta = matrix[n:] / diag
    if theta.size and theta.min() < -rtol:
        return None
    return diag, np.clip(theta, 0.0, None)


def strategy_to_obj(strategy, unit_error=None, provenance=None):
    obj = {"norm": strategy.norm, "variant": strategy.variant_obj()}
    obj["unit_error"] = None if unit_error is None else float(unit_error)
    obj["provenance"] = dict(provenance or {})
    return obj


def strategy_from_obj(obj):
    norm = obj["norm"]
    if norm not in ("L1", "L2"):
        raise ConfigError(f"unknown sensitivity norm {norm!r}")
    variant = obj["variant"]
    groups = obj.get("provenance", {}).get("groups")
    if "explicit" in variant:
        return ExplicitStrategy(variant["explicit"], norm)
    if "kron" in variant:
        return KronStrategy(variant["kron"], norm)
    if "union" in variant:
        shares = [e["share"] for e in variant["union"]]
        subs = [KronStrategy(e["kron"], norm) for e in variant["union"]]
        return UnionKronStrategy(shares, subs, norm, groups=groups)
    if "marginal" in variant:
        m = variant["marginal"]
        return MarginalStrategy(m["domain"], m["theta"], norm)
    raise ConfigError(f"unknown strategy variant keys {sorted(variant)}")


def save_strategy(path, strategy, unit_error=None, provenance=None):
    obj = strategy_to_obj(strategy, unit_error, provenance)
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def load_strategy(path):
    with open(path) as f:
        obj = json.load(f)
    return strategy_from_obj(obj), obj
