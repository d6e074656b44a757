"""Implicit algebra for marginal query and Gram matrices.

A set of weighted marginals over a d-attribute domain is indexed by d-bit
masks: bit 1 (the MOST significant of the d bits) selects the first
attribute.  A weight vector of length 2^d then describes either a strategy
M(theta) (stacked marginal query matrices, one per nonzero mask, ascending
mask order) or a Gram matrix G(v) = sum_a v(a) H(a), where H(a) is the
Kronecker product with an identity factor on each attribute in the mask and
an all-ones factor elsewhere.

Products, inverses and spectra of G(v) reduce to triangular linear algebra
on 2^d-vectors, so none of these operations ever touch an N x N matrix.
Spectra and the closed-form strategy run in O(d 2^d) via superset
transforms; multiplication and (generalized) inversion materialize the
2^d x 2^d triangular map, which keeps them practical to roughly 13
attributes on ordinary hardware.
"""

import functools

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidGramError, ShapeError, SingularGramError
from .kron import kron_matvec

MAX_ATTRIBUTES = 25

PIVOT_RTOL = 1e-12
KAPPA_CLAMP = -1e-12


def check_domain(domain):
    domain = tuple(int(n) for n in domain)
    if any(n < 1 for n in domain):
        raise ValueError(f"attribute sizes must be positive: {domain}")
    if len(domain) > MAX_ATTRIBUTES:
        raise ValueError(
            f"{len(domain)} attributes need 2^{len(domain)} marginal weights; "
            f"restrict the marginal operators to a sub-schema of at most "
            f"{MAX_ATTRIBUTES} attributes")
    return domain


def mask_bits(a, d):
    """Per-attribute bits of mask a, first attribute first."""
    return [(a >> (d - 1 - i)) & 1 for i in range(d)]


def characteristic_vector(domain):
    """c(a) = product of n_i over attributes OUTSIDE the mask."""
    domain = check_domain(domain)
    d = len(domain)
    c = np.ones(1)
    for n in reversed(domain):  # last concat makes the first attribute the MSB
        c = np.concatenate([c * n, c])
    assert c.shape == (2 ** d,)
    return c


def eigen_multiplicities(domain):
    """Multiplicity of the eigenvalue indexed by each mask: prod of (n_i - 1)
    over attributes inside the mask (dense-spectrum validated)."""
    domain = check_domain(domain)
    m = np.ones(1)
    for n in reversed(domain):
        m = np.concatenate([m, m * (n - 1)])
    return m


# full mask-pair grids are 4^d entries; above this many attributes xmat
# falls back to a per-column loop
GRID_MAX_D = 12


@functools.lru_cache(maxsize=8)
def _mask_grids(d):
    a = np.arange(2 ** d)
    return a[:, None] & a[None, :], a[:, None] | a[None, :]


def xmat(u, domain):
    """Triangular map X(u) with X(u)[k, b] = sum_{a : a&b=k} u(a) c(a|b).

    Satisfies G(u) G(v) = G(X(u) v); upper triangular because a&b <= b.
    """
    domain = check_domain(domain)
    d = len(domain)
    k = 2 ** d
    u = np.asarray(u, dtype=float)
    if u.shape != (k,):
        raise ShapeError(f"weight vector must have length {k}")
    c = characteristic_vector(domain)
    x = np.zeros((k, k))
    masks = np.arange(k)
    if d <= GRID_MAX_D:
        land, lor = _mask_grids(d)
        cols = np.broadcast_to(masks, (k, k))
        np.add.at(x, (land, cols), u[:, None] * c[lor])
    else:
        for b in masks:
            np.add.at(x[:, b], masks & b, u * c[masks | b])
    return x


def superset_sums(t, d):
    """Zeta transform over supersets: out[a] = sum_{b : b & a = a} t[b]."""
    out = np.asarray(t, dtype=float).copy()
    for i in range(d):
        bit = 1 << i
        lo = (np.arange(2 ** d) & bit) == 0
        out[lo] += out[~lo]
    return out


def superset_differences(r, d):
    """Inverse of superset_sums (Moebius transform over supersets)."""
    out = np.asarray(r, dtype=float).copy()
    for i in range(d):
        bit = 1 << i
        lo = (np.arange(2 ** d) & bit) == 0
        out[lo] -= out[~lo]
    return out


def ymat(domain):
    """Triangular map Y with Y[a, b] = c(b) when a is a submask of b, else 0.

    The eigenvalues of G(w) are kappa = Y w.  Dense helper for small d;
    the calculators below use the superset transforms instead.
    """
    domain = check_domain(domain)
    d = len(domain)
    k = 2 ** d
    c = characteristic_vector(domain)
    a = np.arange(k)
    sub = (a[:, None] & a[None, :]) == a[:, None]
    return np.where(sub, c[None, :], 0.0)


def gram_mul(u, v, domain):
    """Weights of G(u) G(v); commutative."""
    return xmat(u, domain) @ np.asarray(v, dtype=float)


def identity_weights(domain):
    """z: the weight vector with 1 on the top mask, G(z) = I."""
    z = np.zeros(2 ** len(domain))
    z[-1] = 1.0
    return z


def gram_inverse(u, domain):
    """Weights v with G(u) G(v) = I, by back-substitution on X(u)."""
    domain = check_domain(domain)
    u = np.asarray(u, dtype=float)
    if u[-1] == 0:
        raise SingularGramError("top-mask weight is zero; Gram matrix is singular")
    x = xmat(u, domain)
    if np.any(np.diag(x) == 0):
        raise SingularGramError("triangular system has a zero pivot")
    return solve_triangular(x, identity_weights(domain), lower=False)


def _annihilated_solve(x, rhs, transpose=False):
    """Solve the triangular system treating near-zero pivots as annihilated.

    Rows/columns whose pivot is below PIVOT_RTOL * max|X| are dropped; the
    result is a generalized inverse applied to rhs, exact whenever zero-pivot
    rows of X are themselves zero (always the case for nonnegative weights).
    """
    diag = np.abs(np.diag(x))
    tol = PIVOT_RTOL * max(np.abs(x).max(), 1e-300)
    keep = diag > tol
    out = np.zeros_like(rhs, dtype=float)
    if keep.any():
        xk = x[np.ix_(keep, keep)]
        out[keep] = solve_triangular(xk, rhs[keep], lower=False,
                                     trans="T" if transpose else "N")
    return out


def xmat_pinv_apply(u, rhs, domain, transpose=False):
    """X^g(u) @ rhs (or its transpose-apply) with annihilated zero pivots."""
    return _annihilated_solve(xmat(u, domain), np.asarray(rhs, dtype=float),
                              transpose=transpose)


def gram_ginverse(u, domain):
    """Weights v with G(u) G(v) G(u) = G(u): v = X^g(u) X^g(u) u."""
    domain = check_domain(domain)
    u = np.asarray(u, dtype=float)
    x = xmat(u, domain)
    return _annihilated_solve(x, _annihilated_solve(x, u))


def eigenvalues(w, domain):
    """Eigenvalue of G(w) for each mask: kappa(a) = sum_{b >= a} w(b) c(b).

    The multiplicity of kappa(a) is eigen_multiplicities(domain)[a].
    """
    domain = check_domain(domain)
    c = characteristic_vector(domain)
    return superset_sums(np.asarray(w, dtype=float) * c, len(domain))


def marginal_approx(gram):
    """Marginal Gram weights w with tr[G(u) W^T W] = tr[G(u) G(w)] for all u.

    `gram` is a Kronecker Gram representation (workload.GramRepr): each term
    contributes coeff * prod_i (b_i I + c_i 1) where b_i, c_i are chosen so
    the factor matches the trace and total sum of the exact factor Gram.
    """
    domain = check_domain(gram.domain)
    d = len(domain)
    w = np.zeros(2 ** d)
    for term in gram.terms:
        bc = []
        for i, v in enumerate(term.factors):
            n = domain[i]
            tr = float(np.trace(v))
            tot = float(v.sum())
            if n == 1:
                bc.append((tr, 0.0))  # I and 1 coincide; keep X nonsingular
            else:
                c = (tot - tr) / (n * n - n)
                bc.append((tr / n - c, c))
        # expand prod_i (b_i I + c_i 1) over masks: identity <-> bit set
        weights = np.ones(1)
        for b, c in reversed(bc):
            weights = np.concatenate([weights * c, weights * b])
        w += term.coeff * weights
    return w


def svdb_marginal(w, domain):
    """Singular-value lower bound of a workload whose Gram is G(w)."""
    domain = check_domain(domain)
    kappa = eigenvalues(w, domain)
    if kappa.min() < KAPPA_CLAMP:
        raise InvalidGramError(
            f"negative eigenvalue {kappa.min():.3e}: weights are not the Gram "
            f"of a real workload")
    kappa = np.clip(kappa, 0.0, None)
    mult = eigen_multiplicities(domain)
    n = float(np.prod(domain))
    return float((mult * np.sqrt(kappa)).sum() ** 2 / n)


def closed_form_theta(w, domain):
    """Marginal strategy weights attaining the SVD bound under Gaussian noise.

    theta = sqrt(Y^-1 sqrt(Y w)) by back-substitution on Y; returns None when
    either radicand dips below -1e-12, signalling the caller to fall back to
    numerical optimization.
    """
    domain = check_domain(domain)
    d = len(domain)
    c = characteristic_vector(domain)
    kappa = eigenvalues(w, domain)
    if kappa.min() < KAPPA_CLAMP:
        return None
    # solve sum_{b >= a} c(b) theta_sq(b) = sqrt(kappa(a)) by the inverse
    # superset transform
    theta_sq = superset_differences(np.sqrt(np.clip(kappa, 0.0, None)), d) / c
    if theta_sq.min() < KAPPA_CLAMP:
        return None
    return np.sqrt(np.clip(theta_sq, 0.0, None))


def closed_form_init(w, domain):
    """The closed-form weights with negative radicands zeroed: not optimal,
    but a strong starting point for numerical optimization."""
    domain = check_domain(domain)
    d = len(domain)
    c = characteristic_vector(domain)
    kappa = np.clip(eigenvalues(w, domain), 0.0, None)
    theta_sq = superset_differences(np.sqrt(kappa), d) / c
    return np.sqrt(np.clip(theta_sq, 0.0, None))


def marginal_sizes(domain, theta):
    """Row count of each nonzero-weight marginal, ascending mask order."""
    domain = check_domain(domain)
    d = len(domain)
    sizes = []
    for a in range(2 ** d):
        if theta[a] != 0:
            rows = 1
            for i, bit in enumerate(mask_bits(a, d)):
                rows *= domain[i] if bit else 1
            sizes.append((a, rows))
    return sizes


def _mask_factors(a, domain, kind):
    """Kronecker factors of mask a: query rows (I/T) or Gram blocks (I/1)."""
    d = len(domain)
    factors = []
    for i, bit in enumerate(mask_bits(a, d)):
        n = domain[i]
        if bit:
            factors.append(np.eye(n))
        elif kind == "query":
            factors.append(np.ones((1, n)))
        else:
            factors.append(np.ones((n, n)))
    return factors


def matvec_m(theta, x, domain):
    """M(theta) @ x: concatenated weighted marginals of the data vector."""
    domain = check_domain(domain)
    x = np.asarray(x, dtype=float)
    n = int(np.prod(domain))
    if x.shape != (n,):
        raise ShapeError(f"data vector must have length {n}")
    parts = []
    for a, _ in marginal_sizes(domain, theta):
        parts.append(theta[a] * kron_matvec(_mask_factors(a, domain, "query"), x))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def matvec_mt(theta, y, domain):
    """M(theta)^T @ y: adjoint accumulation over the stacked marginals."""
    domain = check_domain(domain)
    y = np.asarray(y, dtype=float)
    sizes = marginal_sizes(domain, theta)
    total = sum(rows for _, rows in sizes)
    if y.shape != (total,):
        raise ShapeError(f"measurement vector must have length {total}")
    n = int(np.prod(domain))
    out = np.zeros(n)
    offset = 0
    for a, rows in sizes:
        block = y[offset:offset + rows]
        factors = [f.T for f in _mask_factors(a, domain, "query")]
        out += theta[a] * kron_matvec(factors, block)
        offset += rows
    return out


def matvec_g(v, x, domain):
    """G(v) @ x without materializing the N x N Gram matrix."""
    domain = check_domain(domain)
    x = np.asarray(x, dtype=float)
    n = int(np.prod(domain))
    if x.shape != (n,):
        raise ShapeError(f"data vector must have length {n}")
    out = np.zeros(n)
    for a in range(2 ** len(domain)):
        if v[a] != 0:
            out += v[a] * kron_matvec(_mask_factors(a, domain, "gram"), x)
    return out
