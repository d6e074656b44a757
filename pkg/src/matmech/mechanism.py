"""Private measurement pipeline: vectorize records, calibrate noise, measure
the strategy queries, and reconstruct workload answers by least squares.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from . import marginals
from .errors import (CalibrationError, IngestionError, ShapeError, SizeError,
                     SupportError)
from .kron import kron_matvec
from .prng import SplitMix64, derive
from .strategy import (ExplicitStrategy, KronStrategy, MarginalStrategy,
                       UnionKronStrategy, pid_structure)
from .workload import union_error_bound, unit_error

VECTORIZE_MAX_CELLS = 2 ** 30
SENSITIVITY_RTOL = 1e-9


# ---------------------------------------------------------------------------
# domains and data vectors

class DomainConfig:
    """Per-attribute value sets: categorical values or numeric bin edges.

    Numeric bins are left-closed, right-open, except the last bin which is
    closed on both sides.
    """

    def __init__(self, attributes):
        self.attributes = []
        names = set()
        for spec in attributes:
            name = spec["name"]
            if name in names:
                raise IngestionError(f"duplicate attribute name {name!r}")
            names.add(name)
            if "values" in spec:
                values = [str(v) for v in spec["values"]]
                if len(set(values)) != len(values):
                    raise IngestionError(f"attribute {name!r} has duplicate values")
                self.attributes.append((name, "categorical", values))
            elif "edges" in spec:
                edges = np.asarray(spec["edges"], dtype=float)
                if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
                    raise IngestionError(
                        f"attribute {name!r} needs strictly increasing bin edges")
                self.attributes.append((name, "binned", edges))
            else:
                raise IngestionError(
                    f"attribute {name!r} needs either values or edges")

    @property
    def names(self):
        return [a[0] for a in self.attributes]

    @property
    def sizes(self):
        return tuple(len(a[2]) if a[1] == "categorical" else len(a[2]) - 1
                     for a in self.attributes)

    def index_of(self, name, kind, spec, value, row):
        if kind == "categorical":
            try:
                return spec.index(str(value))
            except ValueError:
                raise IngestionError(
                    f"row {row}: value {value!r} of attribute {name!r} is not "
                    f"in the configured domain") from None
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise IngestionError(
                f"row {row}: attribute {name!r} expects a number, got "
                f"{value!r}") from None
        if v < spec[0] or v > spec[-1]:
            raise IngestionError(
                f"row {row}: value {v} of attribute {name!r} outside bin "
                f"range [{spec[0]}, {spec[-1]}]")
        if v == spec[-1]:
            return len(spec) - 2  # final bin is closed
        return int(np.searchsorted(spec, v, side="right")) - 1

    @classmethod
    def from_obj(cls, obj):
        return cls(obj["attributes"])


@dataclass
class DataVector:
    domain: tuple
    counts: np.ndarray

    @property
    def total(self):
        return float(self.counts.sum())


def vectorize_dataset(rows, cfg):
    """Count records into the full cross-product histogram.

    `rows` yields mappings from attribute name to raw value (e.g. csv
    DictReader rows); row numbers in errors are 1-based data rows.
    """
    sizes = cfg.sizes
    n = int(np.prod(sizes))
    if n > VECTORIZE_MAX_CELLS:
        raise SizeError(
            f"domain has {n} cells; explicit vectorization is capped at "
            f"{VECTORIZE_MAX_CELLS}. Larger domains need a factored data "
            f"representation, which this package does not provide; restrict "
            f"the schema to a sub-domain instead")
    counts = np.zeros(n)
    strides = np.cumprod((sizes[1:] + (1,))[::-1])[::-1]  # row-major
    for r, row in enumerate(rows, start=1):
        idx = 0
        for (name, kind, spec), stride in zip(cfg.attributes, strides):
            if name not in row:
                raise IngestionError(f"row {r}: missing attribute {name!r}")
            idx += stride * cfg.index_of(name, kind, spec, row[name], r)
        counts[idx] += 1.0
    return DataVector(sizes, counts)


# ---------------------------------------------------------------------------
# noise calibration

@dataclass
class NoiseSpec:
    mechanism: str          # "laplace" | "gaussian"
    epsilon: float
    delta: float
    scale: float            # laplace b or gaussian sigma
    seed: int = 0


def gaussian_delta(epsilon, sigma):
    """delta achieved by a unit-sensitivity gaussian mechanism at scale sigma."""
    a = 1.0 / (2.0 * sigma) - epsilon * sigma
    b = -1.0 / (2.0 * sigma) - epsilon * sigma
    return math.exp(log_ndtr(a)) - math.exp(epsilon + log_ndtr(b))


def classical_gaussian_sigma(epsilon, delta):
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def calibrate(mechanism, epsilon, delta=None, seed=0):
    """Resolve the noise scale: b = 1/epsilon for Laplace; for Gaussian the
    minimal sigma meeting the exact (epsilon, delta) condition, by bisection.
    """
    if epsilon <= 0:
        raise CalibrationError("epsilon must be positive")
    if mechanism == "laplace":
        return NoiseSpec("laplace", epsilon, 0.0, 1.0 / epsilon, seed)
    if mechanism != "gaussian":
        raise CalibrationError(f"unknown mechanism {mechanism!r}")
    if delta is None or not 0.0 < delta < 1.0:
        raise CalibrationError("gaussian noise needs delta in (0, 1)")
    lo = 1e-6
    hi = 2.0 * classical_gaussian_sigma(epsilon, delta)
    if gaussian_delta(epsilon, lo) <= delta:
        return NoiseSpec("gaussian", epsilon, delta, lo, seed)
    if gaussian_delta(epsilon, hi) > delta:
        raise CalibrationError(
            f"no bracketing scale in [{lo}, {hi}] for eps={epsilon}, "
            f"delta={delta}")
    # delta(sigma) is strictly decreasing on the bracket
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gaussian_delta(epsilon, mid) > delta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return NoiseSpec("gaussian", epsilon, delta, hi, seed)


# ---------------------------------------------------------------------------
# measure

@dataclass
class Measurement:
    strategy: object
    answers: list            # one vector per union group, else a single entry
    scale: float
    seed: int = 0
    meta: dict = field(default_factory=dict)


def _noise(rng, spec, size, scale):
    if scale == 0.0:
        return np.zeros(size)
    if spec.mechanism == "laplace":
        return rng.laplace(size, scale)
    return rng.normal(size, scale)


def measure(strat, x, noise, *, zero_noise=False):
    """y = A x + (noise scale) * xi, per union group when applicable.

    Strategies must come in at unit sensitivity so the raw calibrated scale
    applies directly.
    """
    counts = x.counts if isinstance(x, DataVector) else np.asarray(x, float)
    sens = strat.sensitivity()
    if abs(sens - 1.0) > SENSITIVITY_RTOL:
        raise ShapeError(
            f"strategy has sensitivity {sens:.6g}; normalize it to 1 before "
            f"measuring")
    rng = SplitMix64(noise.seed)
    scale = 0.0 if zero_noise else noise.scale
    if isinstance(strat, UnionKronStrategy):
        answers = []
        for share, sub in zip(strat.shares, strat.subs):
            clean = share * sub.matvec(counts)
            answers.append(clean + _noise(rng, noise, clean.size, scale))
        return Measurement(strat, answers, scale, noise.seed)
    clean = strat.matvec(counts)
    return Measurement(strat, [clean + _noise(rng, noise, clean.size, scale)],
                       scale, noise.seed)


# ---------------------------------------------------------------------------
# reconstruct

def _explicit_pinv_apply(strat, y):
    pid = None if strat.pid_theta is None else \
        (1.0 / (1.0 + strat.pid_theta.sum(axis=0)), strat.pid_theta)
    if pid is None:
        pid = pid_structure(strat.matrix)
    if pid is not None:
        dvec, theta = pid
        return pid_pinv_apply(dvec, theta, y)
    return np.linalg.pinv(strat.matrix) @ y


def pid_pinv_apply(dvec, theta, y):
    """A+ y for A = [I; Theta] diag(dvec) in O(n p) flops (never forms A+)."""
    n = dvec.size
    p = theta.shape[0]
    aty = dvec * (y[:n] + (theta.T @ y[n:] if p else 0.0))
    v = aty / dvec
    m = np.eye(p) + theta @ theta.T
    return (v - theta.T @ np.linalg.solve(m, theta @ v)) / dvec


def _workload_answers(w, xhat):
    parts = [t.weight * kron_matvec(t.factors, xhat) for t in w.terms]
    return np.concatenate(parts)


def reconstruct(strat, measurement, w):
    """Workload answers from noisy strategy answers.

    Kron and explicit strategies estimate the data vector by (implicit)
    pseudoinverse; marginal strategies go through the triangular Gram
    inverse; union strategies answer each term group by local least squares
    (answers are then not necessarily consistent across groups).
    """
    sizes = [a.size for a in measurement.answers]
    if isinstance(strat, UnionKronStrategy):
        expected = [s.num_rows for s in strat.subs]
    else:
        expected = [strat.num_rows]
    if sizes != expected:
        raise ShapeError(
            f"measurement rows {sizes} do not match strategy rows {expected}")
    if isinstance(strat, UnionKronStrategy):
        groups = strat.term_groups(len(w.terms))
        term_answers = [None] * len(w.terms)
        for g, (share, sub, grp, y) in enumerate(zip(
                strat.shares, strat.subs, groups, measurement.answers)):
            pinvs = [np.linalg.pinv(f) for f in sub.factors]
            # local least squares is only unbiased when the sub-strategy
            # spans its own term group, factor by factor
            for j in grp:
                t = w.terms[j]
                for i, (f, fp) in enumerate(zip(sub.factors, pinvs)):
                    wf = t.factors[i]
                    resid = np.linalg.norm(wf @ (fp @ f) - wf)
                    if resid > 1e-6 * max(np.linalg.norm(wf), 1e-300):
                        raise SupportError(
                            f"sub-strategy {g} is singular on attribute {i} "
                            f"for workload term {j}; its answers cannot be "
                            f"reconstructed")
            xhat_g = kron_matvec(pinvs, y / share)
            for j in grp:
                t = w.terms[j]
                term_answers[j] = t.weight * kron_matvec(t.factors, xhat_g)
        return np.concatenate(term_answers)
    y = measurement.answers[0]
    if isinstance(strat, KronStrategy):
        xhat = kron_matvec([np.linalg.pinv(f) for f in strat.factors], y)
    elif isinstance(strat, ExplicitStrategy):
        xhat = _explicit_pinv_apply(strat, y)
    elif isinstance(strat, MarginalStrategy):
        v = marginals.matvec_mt(strat.theta, y, strat.domain)
        eta = marginals.gram_ginverse(strat.theta ** 2, strat.domain)
        xhat = marginals.matvec_g(eta, v, strat.domain)
    else:
        raise TypeError(f"unknown strategy type {type(strat).__name__}")
    return _workload_answers(w, xhat)


# ---------------------------------------------------------------------------
# error reporting

@dataclass
class ErrorReport:
    q: float
    tse: float
    rmse: float
    is_bound: bool = False


def analytic_rmse(w, strat, noise, m_queries=None):
    """Expected error: TSE = (2 b^2 | sigma^2) Q, RMSE = sqrt(TSE / m).

    Union strategies report the budget-split upper bound and flag it.
    """
    m = w.num_queries if m_queries is None else int(m_queries)
    if isinstance(strat, UnionKronStrategy):
        q = union_error_bound(w, strat)
        is_bound = True
    else:
        q = unit_error(w, strat)
        is_bound = False
    factor = 2.0 * noise.scale ** 2 if noise.mechanism == "laplace" \
        else noise.scale ** 2
    tse = factor * q
    return ErrorReport(q=q, tse=tse, rmse=math.sqrt(tse / m), is_bound=is_bound)


def empirical_error(w, strat, noise, x, trials):
    """Monte-Carlo mean squared error per query over seeded trials."""
    if trials < 2:
        raise ValueError("need at least two trials")
    counts = x.counts if isinstance(x, DataVector) else np.asarray(x, float)
    truth = _workload_answers(w, counts)
    m = truth.size
    errs = np.empty(trials)
    for t in range(trials):
        spec_t = NoiseSpec(noise.mechanism, noise.epsilon, noise.delta,
                           noise.scale, seed=derive(noise.seed, t))
        meas = measure(strat, counts, spec_t)
        answers = reconstruct(strat, meas, w)
        errs[t] = float(((answers - truth) ** 2).sum()) / m
    mean = float(errs.mean())
    stderr = float(errs.std(ddof=1) / math.sqrt(trials))
    return mean, stderr


def write_answers_csv(path, w, answers):
    """Answer vector as (term_index, row_index, answer) rows."""
    with open(path, "w") as f:
        f.write("term_index,row_index,answer\n")
        pos = 0
        for j, t in enumerate(w.terms):
            rows = t.num_rows
            for r in range(rows):
                f.write(f"{j},{r},{float(answers[pos + r])!r}\n")
            pos += rows


def write_metadata(path, noise, seed, provenance, notes=None):
    obj = {"mechanism": noise.mechanism, "epsilon": noise.epsilon,
           "delta": noise.delta, "scale": noise.scale, "seed": seed,
           "strategy_provenance": provenance}
    if notes:
        obj["notes"] = notes
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")
