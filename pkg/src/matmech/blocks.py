"""Single-attribute predicate-set building blocks.

Each block describes a set of 0/1 (or literal real) queries over one
attribute of size n and knows how to produce its matrix and its Gram matrix.
AllRange rows are ordered lexicographically by (start, end) so that
serialized strategies and measurements are reproducible.
"""

import numpy as np

from .errors import BlockError
from .prng import SplitMix64


class BuildingBlock:
    """Base class; subclasses define num_rows, materialize and optionally gram."""

    def __init__(self, n):
        if n < 1:
            raise BlockError(f"domain size must be positive, got {n}")
        self.n = int(n)

    @property
    def num_rows(self):
        raise NotImplementedError

    def materialize(self):
        raise NotImplementedError

    def gram(self):
        w = self.materialize()
        return w.T @ w

    def descriptor(self):
        """JSON-compatible descriptor used in workload spec files."""
        raise NotImplementedError

    def max_col_norm(self, norm):
        """Largest column norm.  Every predicate block is a 0/1 matrix, so
        column norms follow from the Gram diagonal without materializing."""
        d = float(np.diag(self.gram()).max())
        return d if norm == "L1" else float(np.sqrt(d))

    def is_total_identity(self):
        """True when every query row is a full-domain total or a point count."""
        return False

    def __eq__(self, other):
        return type(self) is type(other) and self.descriptor() == other.descriptor() \
            and self.n == other.n

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n})"


class Identity(BuildingBlock):
    @property
    def num_rows(self):
        return self.n

    def materialize(self):
        return np.eye(self.n)

    def gram(self):
        return np.eye(self.n)

    def descriptor(self):
        return "identity"

    def is_total_identity(self):
        return True


class Total(BuildingBlock):
    @property
    def num_rows(self):
        return 1

    def materialize(self):
        return np.ones((1, self.n))

    def gram(self):
        return np.ones((self.n, self.n))

    def descriptor(self):
        return "total"

    def is_total_identity(self):
        return True


class Prefix(BuildingBlock):
    @property
    def num_rows(self):
        return self.n

    def materialize(self):
        return np.tril(np.ones((self.n, self.n)))

    def gram(self):
        return gram_closed_form(self)

    def descriptor(self):
        return "prefix"


class AllRange(BuildingBlock):
    @property
    def num_rows(self):
        return self.n * (self.n + 1) // 2

    def materialize(self):
        n = self.n
        w = np.zeros((self.num_rows, n))
        r = 0
        for a in range(n):
            for b in range(a, n):
                w[r, a:b + 1] = 1.0
                r += 1
        return w

    def gram(self):
        return gram_closed_form(self)

    def descriptor(self):
        return "allrange"


class WidthRange(BuildingBlock):
    def __init__(self, n, width):
        super().__init__(n)
        if not 1 <= width <= n:
            raise BlockError(f"range width {width} invalid for domain size {n}")
        self.width = int(width)

    @property
    def num_rows(self):
        return self.n - self.width + 1

    def materialize(self):
        w = np.zeros((self.num_rows, self.n))
        for a in range(self.num_rows):
            w[a, a:a + self.width] = 1.0
        return w

    def descriptor(self):
        return {"width": self.width}

    def __repr__(self):
        return f"WidthRange(n={self.n}, width={self.width})"


class Permuted(BuildingBlock):
    """Columns of the inner block shuffled by a seed-determined permutation."""

    def __init__(self, inner, seed):
        super().__init__(inner.n)
        self.inner = inner
        self.seed = int(seed)

    @property
    def num_rows(self):
        return self.inner.num_rows

    def permutation(self):
        return SplitMix64(self.seed).permutation(self.n)

    def materialize(self):
        return self.inner.materialize()[:, self.permutation()]

    def gram(self):
        perm = self.permutation()
        g = self.inner.gram()
        return g[np.ix_(perm, perm)]

    def descriptor(self):
        return {"permuted": {"inner": self.inner.descriptor(), "seed": self.seed}}

    def __repr__(self):
        return f"Permuted({self.inner!r}, seed={self.seed})"


class Literal(BuildingBlock):
    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
            raise BlockError("literal block needs a 2-D matrix")
        if not np.isfinite(matrix).all():
            raise BlockError("literal block entries must be finite")
        super().__init__(matrix.shape[1])
        self.matrix = matrix

    @property
    def num_rows(self):
        return self.matrix.shape[0]

    def materialize(self):
        return self.matrix.copy()

    def descriptor(self):
        return {"literal": self.matrix.tolist()}

    def max_col_norm(self, norm):
        if norm == "L1":
            return float(np.abs(self.matrix).sum(axis=0).max())
        return float(np.sqrt((self.matrix ** 2).sum(axis=0).max()))

    def is_total_identity(self):
        ident = np.isclose(self.matrix.sum(axis=1), 1.0) & \
            np.isclose((self.matrix != 0).sum(axis=1), 1.0)
        total = np.isclose(self.matrix, 1.0).all(axis=1)
        return bool((ident | total).all())

    def __eq__(self, other):
        return isinstance(other, Literal) and self.matrix.shape == other.matrix.shape \
            and np.array_equal(self.matrix, other.matrix)


def materialize_block(block):
    """Explicit matrix of a building block."""
    return block.materialize()


def gram_closed_form(block):
    """W^T W of Prefix or AllRange without materializing W.

    With 0-indexed entries: AllRange G[i,j] = (min(i,j)+1)(n - max(i,j)),
    Prefix G[i,j] = n - max(i,j).
    """
    n = block.n
    idx = np.arange(n)
    hi = np.maximum.outer(idx, idx)
    if isinstance(block, AllRange):
        lo = np.minimum.outer(idx, idx)
        return (lo + 1.0) * (n - hi)
    if isinstance(block, Prefix):
        return (n - hi).astype(float)
    raise BlockError(f"no closed-form Gram for {type(block).__name__}")


def block_from_descriptor(desc, n):
    """Parse a workload-spec block descriptor for an attribute of size n."""
    if desc == "identity":
        return Identity(n)
    if desc == "total":
        return Total(n)
    if desc == "prefix":
        return Prefix(n)
    if desc == "allrange":
        return AllRange(n)
    if isinstance(desc, dict):
        if "width" in desc:
            return WidthRange(n, desc["width"])
        if "permuted" in desc:
            inner = block_from_descriptor(desc["permuted"]["inner"], n)
            return Permuted(inner, desc["permuted"]["seed"])
        if "literal" in desc:
            lit = Literal(desc["literal"])
            if lit.n != n:
                raise BlockError(
                    f"literal block has {lit.n} columns, attribute size is {n}")
            return lit
    raise BlockError(f"unknown block descriptor {desc!r}")
