"""Implicit workloads: weighted unions of Kronecker products over a domain.

A logical workload (one building block per attribute per product) compiles
into an ImplicitWorkload of weighted Kronecker terms.  Error and bound
calculators work off the per-factor Gram representation and never
materialize the N-column matrix unless explicitly asked to.
"""

import itertools
import json
from dataclasses import dataclass

import numpy as np

from . import marginals
from .blocks import Identity, Literal, Total, block_from_descriptor
from .errors import CompileError, ShapeError, SizeError, SupportError
from .kron import DEFAULT_ENTRY_CAP, factor_error, kron_materialize, \
    max_col_norm
from .strategy import (ExplicitStrategy, KronStrategy, MarginalStrategy,
                       UnionKronStrategy)


class KronTerm:
    """One weighted product: weight * (factor_1 x ... x factor_d).

    Terms compiled from building blocks materialize their factor matrices
    lazily, so Gram-based calculators never pay for large query sets.
    """

    def __init__(self, weight, factors=None, blocks=None):
        if factors is None and blocks is None:
            raise CompileError("a term needs factor matrices or building blocks")
        self.weight = float(weight)
        self.blocks = list(blocks) if blocks is not None else None
        self._factors = None
        if factors is not None:
            self._factors = [np.asarray(f, dtype=float) for f in factors]

    @property
    def factors(self):
        if self._factors is None:
            self._factors = [b.materialize() for b in self.blocks]
        return self._factors

    def factor_shape(self, i):
        if self._factors is not None:
            return self._factors[i].shape
        b = self.blocks[i]
        return (b.num_rows, b.n)

    @property
    def num_attributes(self):
        return len(self._factors if self._factors is not None else self.blocks)

    @property
    def num_rows(self):
        return int(np.prod([self.factor_shape(i)[0]
                            for i in range(self.num_attributes)]))

    def factor_grams(self):
        if self.blocks is not None:
            return [b.gram() for b in self.blocks]
        return [f.T @ f for f in self._factors]


@dataclass
class GramTerm:
    coeff: float
    factors: list


@dataclass
class GramRepr:
    """W^T W as sum_j coeff_j * (G_1^j x ... x G_d^j)."""
    domain: tuple
    terms: list

    def dense(self, max_entries=DEFAULT_ENTRY_CAP):
        n = int(np.prod(self.domain))
        if n * n > max_entries:
            raise SizeError(f"dense Gram needs {n}x{n} entries")
        out = np.zeros((n, n))
        for t in self.terms:
            out += t.coeff * kron_materialize(t.factors, max_entries)
        return out


class ImplicitWorkload:
    def __init__(self, domain, terms):
        self.domain = tuple(int(n) for n in domain)
        if not terms:
            raise CompileError("workload needs at least one term")
        for j, t in enumerate(terms):
            if t.num_attributes != len(self.domain):
                raise CompileError(
                    f"term {j} has {t.num_attributes} factors for "
                    f"{len(self.domain)} attributes")
            for i in range(t.num_attributes):
                cols = t.factor_shape(i)[1]
                if cols != self.domain[i]:
                    raise CompileError(
                        f"term {j} factor {i} has {cols} columns, "
                        f"attribute size is {self.domain[i]}")
        self.terms = list(terms)

    @property
    def num_cols(self):
        return int(np.prod(self.domain))

    @property
    def num_queries(self):
        return sum(t.num_rows for t in self.terms)

    def __repr__(self):
        return (f"ImplicitWorkload(domain={self.domain}, k={len(self.terms)}, "
                f"m={self.num_queries})")


# ---------------------------------------------------------------------------
# construction

def impvec(products, domain):
    """Compile weighted products of building blocks into an implicit workload.

    `products` is a sequence of (weight, [block_1 ... block_d]).
    """
    domain = tuple(int(n) for n in domain)
    terms = []
    for j, (weight, blocks) in enumerate(products):
        if len(blocks) != len(domain):
            raise CompileError(
                f"product {j} names {len(blocks)} predicate sets for "
                f"{len(domain)} attributes")
        for i, b in enumerate(blocks):
            if b.n != domain[i]:
                raise CompileError(
                    f"product {j} block {i} is on a domain of size {b.n}, "
                    f"attribute size is {domain[i]}")
        terms.append(KronTerm(float(weight), blocks=list(blocks)))
    return ImplicitWorkload(domain, terms)


def all_k_way_marginals(domain, k, weight=1.0):
    """Union of the C(d, k) products measuring every k-attribute marginal."""
    d = len(domain)
    products = []
    for combo in itertools.combinations(range(d), k):
        blocks = [Identity(domain[i]) if i in combo else Total(domain[i])
                  for i in range(d)]
        products.append((weight, blocks))
    return impvec(products, domain)


def marginals_workload(domain, mask_weights):
    """Workload of weighted marginals given one weight per attribute-subset mask."""
    domain = tuple(domain)
    d = len(domain)
    if len(mask_weights) != 2 ** d:
        raise CompileError(f"need {2 ** d} marginal weights, got {len(mask_weights)}")
    products = []
    for a, w in enumerate(mask_weights):
        if w == 0:
            continue
        bits = marginals.mask_bits(a, d)
        blocks = [Identity(domain[i]) if bits[i] else Total(domain[i])
                  for i in range(d)]
        products.append((float(w), blocks))
    return impvec(products, domain)


def union(workloads):
    """Stack several workloads over the same domain."""
    domain = workloads[0].domain
    terms = []
    for w in workloads:
        if w.domain != domain:
            raise CompileError("cannot union workloads over different domains")
        terms.extend(w.terms)
    return ImplicitWorkload(domain, terms)


# ---------------------------------------------------------------------------
# materialization and norms

def materialize_explicit(w, max_entries=DEFAULT_ENTRY_CAP):
    """Vertical stack of weight_j * (F_1 x ... x F_d), first factor slowest."""
    n = w.num_cols
    total = w.num_queries * n
    if total > max_entries:
        raise SizeError(
            f"explicit form needs {w.num_queries}x{n} = {total} entries, "
            f"cap is {max_entries}")
    return np.vstack([t.weight * kron_materialize(t.factors, max_entries)
                      for t in w.terms])


def sensitivity_norm(obj, norm):
    """Maximum column norm (L1 or L2) of a workload-shaped object."""
    if isinstance(obj, np.ndarray):
        return max_col_norm(obj, norm)
    if isinstance(obj, KronTerm):
        s = abs(obj.weight)
        if obj.blocks is not None:
            for b in obj.blocks:
                s *= b.max_col_norm(norm)
        else:
            for f in obj.factors:
                s *= max_col_norm(f, norm)
        return s
    if isinstance(obj, ImplicitWorkload):
        per = [sensitivity_norm(t, norm) for t in obj.terms]
        if norm == "L1":
            return float(sum(per))
        return float(np.sqrt(sum(p * p for p in per)))
    if hasattr(obj, "sensitivity"):  # strategy objects
        return obj.sensitivity()
    raise TypeError(f"cannot compute sensitivity of {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Gram representations

def gram(w):
    """Per-term factored Gram: uses block closed forms where available."""
    return GramRepr(w.domain,
                    [GramTerm(t.weight ** 2, t.factor_grams()) for t in w.terms])


def negate_rows(matrix):
    """Vector form of negated predicates: each row q becomes 1 - q."""
    return np.ones_like(matrix) - np.asarray(matrix, dtype=float)


def disjunction_gram(term_a, term_b):
    """Gram of the two-product difference  A_1 x...x A_d  -  B_1 x...x B_d.

    With A the all-ones product and B_i = 1 - vec(Phi_i) this is the Gram of
    the workload of disjunctions over the per-attribute predicate sets Phi_i.
    Expands to exactly four Kronecker terms.
    """
    if len(term_a.factors) != len(term_b.factors):
        raise ShapeError("terms have different attribute counts")
    for fa, fb in zip(term_a.factors, term_b.factors):
        if fa.shape != fb.shape:
            raise ShapeError(
                f"factor shapes differ: {fa.shape} vs {fb.shape}")
    wa, wb = term_a.weight, term_b.weight
    domain = tuple(f.shape[1] for f in term_a.factors)
    aa = [f.T @ f for f in term_a.factors]
    ab = [fa.T @ fb for fa, fb in zip(term_a.factors, term_b.factors)]
    ba = [f.T for f in ab]
    bb = [f.T @ f for f in term_b.factors]
    return GramRepr(domain, [GramTerm(wa * wa, aa),
                             GramTerm(-wa * wb, ab),
                             GramTerm(-wa * wb, ba),
                             GramTerm(wb * wb, bb)])


def as_marginal_gram_weights(w):
    """Mask-indexed Gram weights when every factor is Identity or Total, else None."""
    d = len(w.domain)
    weights = np.zeros(2 ** d)
    for t in w.terms:
        mask = 0
        blocks = t.blocks or [Literal(f) for f in t.factors]
        for i, b in enumerate(blocks):
            if isinstance(b, Identity) or (
                    isinstance(b, Literal) and b.matrix.shape[0] == b.n
                    and np.array_equal(b.matrix, np.eye(b.n))):
                mask |= 1 << (d - 1 - i)
            elif isinstance(b, Total) or (
                    isinstance(b, Literal) and b.matrix.shape[0] == 1
                    and np.all(b.matrix == 1.0)):
                pass
            else:
                return None
        weights[mask] += t.weight ** 2
    return weights


# ---------------------------------------------------------------------------
# error and bound calculators

SUPPORT_CHECK_MAX_N = 4096
SUPPORT_RTOL = 1e-6


def _strategy_dense(strat, max_entries=DEFAULT_ENTRY_CAP):
    if isinstance(strat, ExplicitStrategy):
        return strat.matrix
    if isinstance(strat, KronStrategy):
        return kron_materialize(strat.factors, max_entries)
    if isinstance(strat, MarginalStrategy):
        rows = []
        for a, _ in marginals.marginal_sizes(strat.domain, strat.theta):
            factors = marginals._mask_factors(a, strat.domain, "query")
            rows.append(strat.theta[a] * kron_materialize(factors, max_entries))
        return np.vstack(rows)
    if isinstance(strat, UnionKronStrategy):
        return np.vstack([a * kron_materialize(s.factors, max_entries)
                          for a, s in zip(strat.shares, strat.subs)])
    raise TypeError(type(strat).__name__)


def check_support(w, strat):
    """Verify W A+ A = W; dense check below SUPPORT_CHECK_MAX_N columns,
    structural sufficient conditions above."""
    n = w.num_cols
    if n <= SUPPORT_CHECK_MAX_N:
        try:
            ad = _strategy_dense(strat)
            gd = (w if isinstance(w, GramRepr) else gram(w)).dense()
        except SizeError:
            pass
        else:
            # ||W(I - A+A)||_F^2 = tr[G_W] - tr[G_W A+A]
            proj = np.linalg.pinv(ad) @ ad
            trg = float(np.trace(gd))
            resid2 = max(trg - float((gd * proj).sum()), 0.0)
            if resid2 > (SUPPORT_RTOL ** 2) * max(trg, 1e-300):
                raise SupportError(
                    f"strategy does not support the workload (relative "
                    f"residual {np.sqrt(resid2 / max(trg, 1e-300)):.2e})")
            return
    if isinstance(strat, KronStrategy):
        if not strat.full_column_rank():
            raise SupportError("rank-deficient Kronecker factors on a domain "
                               "too large for the dense support check")
        return
    if isinstance(strat, MarginalStrategy):
        wt = marginals.marginal_approx(gram(w))
        x = marginals.xmat(strat.theta ** 2, strat.domain)
        proj = marginals._annihilated_solve(x, x @ wt)
        if np.abs(proj - wt).max() > SUPPORT_RTOL * max(np.abs(wt).max(), 1e-300):
            raise SupportError("marginal strategy does not span the workload")
        return
    if isinstance(strat, ExplicitStrategy):
        if np.linalg.matrix_rank(strat.matrix) < strat.matrix.shape[1]:
            raise SupportError("rank-deficient explicit strategy on a domain "
                               "too large for the dense support check")
        return
    raise SupportError(f"cannot verify support for {type(strat).__name__}")


def unit_error(w, strat, verify_support=None):
    """Unit-noise expected total squared error core:
    Q = sensitivity(A)^2 * ||W A+||_F^2.

    `w` is an ImplicitWorkload or a GramRepr.  Union strategies have no exact
    Q; see union_error_bound.
    """
    g = w if isinstance(w, GramRepr) else gram(w)
    if verify_support is None:
        verify_support = isinstance(w, ImplicitWorkload)
    if verify_support and isinstance(w, ImplicitWorkload):
        check_support(w, strat)
    sens2 = strat.sensitivity() ** 2
    if isinstance(strat, KronStrategy):
        total = 0.0
        for t in g.terms:
            prod = t.coeff
            for a, fg in zip(strat.factors, t.factors):
                prod *= factor_error(a, fg)
            total += prod
        return sens2 * total
    if isinstance(strat, MarginalStrategy):
        wt = marginals.marginal_approx(g)
        t = marginals.xmat_pinv_apply(strat.theta ** 2, wt, strat.domain)
        n = float(np.prod(g.domain))
        return sens2 * n * float(t.sum())
    if isinstance(strat, ExplicitStrategy):
        gd = g.dense()
        ata = strat.matrix.T @ strat.matrix
        return sens2 * float(np.trace(np.linalg.pinv(ata) @ gd))
    if isinstance(strat, UnionKronStrategy):
        raise SupportError(
            "no exact unit error for union strategies; use union_error_bound")
    raise TypeError(f"unknown strategy type {type(strat).__name__}")


def union_error_bound(w, strat):
    """Upper bound sum_j E_j / share_j^2 on Q for a union strategy answering
    each term group with its own sub-strategy."""
    groups = strat.term_groups(len(w.terms))
    covered = sorted(i for grp in groups for i in grp)
    if covered != list(range(len(w.terms))):
        raise SupportError("strategy groups do not partition the workload terms")
    total = 0.0
    for share, sub, grp in zip(strat.shares, strat.subs, groups):
        sub_w = ImplicitWorkload(w.domain, [w.terms[i] for i in grp])
        total += unit_error(sub_w, sub) / share ** 2
    return total


def _factor_svdb(gram_matrix):
    lam = np.clip(np.linalg.eigvalsh(gram_matrix), 0.0, None)
    return float(np.sqrt(lam).sum() ** 2 / gram_matrix.shape[0])


def svd_bound(w):
    """Singular-value lower bound on Q, or None when no tractable form exists.

    Supported: explicit matrices, single-product workloads (bound multiplies
    across factors), and workloads of marginals.
    """
    if isinstance(w, np.ndarray):
        sv = np.linalg.svd(w, compute_uv=False)
        return float(sv.sum() ** 2 / w.shape[1])
    if len(w.terms) == 1:
        t = w.terms[0]
        out = t.weight ** 2
        for fg in t.factor_grams():
            out *= _factor_svdb(fg)
        return out
    mw = as_marginal_gram_weights(w)
    if mw is not None:
        return marginals.svdb_marginal(mw, w.domain)
    return None


def workload_strategy_error(w, norm):
    """Q of the workload measured as its own strategy, or None if intractable.

    Equals sensitivity^2 * rank(W); the rank comes from the marginal spectrum
    for marginal workloads, multiplies across factors for single products,
    and falls back to a dense computation on small domains.
    """
    sens2 = sensitivity_norm(w, norm) ** 2
    if len(w.terms) == 1:
        rank = 1.0
        for fg in w.terms[0].factor_grams():
            lam = np.clip(np.linalg.eigvalsh(fg), 0.0, None)
            rank *= float((lam > 1e-9 * max(lam.max(), 1e-300)).sum())
        return sens2 * rank
    mw = as_marginal_gram_weights(w)
    if mw is not None:
        kappa = marginals.eigenvalues(mw, w.domain)
        mult = marginals.eigen_multiplicities(w.domain)
        scale = max(kappa.max(), 1e-300)
        return sens2 * float(mult[kappa > 1e-12 * scale].sum())
    try:
        wd = materialize_explicit(w)
    except SizeError:
        return None
    return sens2 * float(np.linalg.matrix_rank(wd))


# ---------------------------------------------------------------------------
# workload spec files

def workload_from_spec(obj):
    """Parse the JSON workload description:
    {"domain": [...], "terms": [{"weight": w, "blocks": [...]}, ...],
     "marginals": {"weights": [...]}} (either or both of terms/marginals).
    """
    try:
        domain = tuple(int(n) for n in obj["domain"])
    except (KeyError, TypeError, ValueError) as e:
        raise CompileError(f"bad or missing domain: {e}") from e
    products = []
    for j, term in enumerate(obj.get("terms", [])):
        try:
            weight = float(term.get("weight", 1.0))
            descs = term["blocks"]
            if len(descs) != len(domain):
                raise CompileError(
                    f"term {j} names {len(descs)} blocks for "
                    f"{len(domain)} attributes")
            blocks = [block_from_descriptor(dsc, domain[i])
                      for i, dsc in enumerate(descs)]
        except CompileError:
            raise
        except Exception as e:
            raise CompileError(f"term {j}: {e}") from e
        products.append((weight, blocks))
    workloads = []
    if products:
        workloads.append(impvec(products, domain))
    if "marginals" in obj and obj["marginals"]:
        workloads.append(marginals_workload(domain, obj["marginals"]["weights"]))
    if not workloads:
        raise CompileError("workload spec has neither terms nor marginals")
    return union(workloads) if len(workloads) > 1 else workloads[0]


def workload_to_spec(w):
    """Canonical JSON form; terms compiled from blocks keep their descriptors."""
    terms = []
    for t in w.terms:
        blocks = t.blocks or [Literal(f) for f in t.factors]
        terms.append({"weight": t.weight,
                      "blocks": [b.descriptor() for b in blocks]})
    return {"domain": list(w.domain), "terms": terms}


def load_workload(path):
    with open(path) as f:
        obj = json.load(f)
    return workload_from_spec(obj)


def save_workload(path, w):
    with open(path, "w") as f:
        json.dump(workload_to_spec(w), f, sort_keys=True, indent=1)
        f.write("\n")


def implicit_storage_bytes(w):
    """Bytes to store the factor matrices (8-byte entries)."""
    return 8 * sum(int(np.prod(t.factor_shape(i)))
                   for t in w.terms for i in range(t.num_attributes))
