"""Hard-instance families: yes/no LTFs and the coefficient vectors they induce.

A query matrix ``X`` (``d x n``, entries ``+-1/sqrt(n)``) turns a weight
vector ``w`` into ``sum_i w_i X^(i)``.  Under the yes distribution this is
``S``; under the no distribution it is ``T``; the hybrids ``Q^(i)`` take the
first ``i`` weights from the no variable.

Columns of ``X`` take at most ``min(n, 2^d)`` distinct values.  When there
are few column types the samplers group identical columns: a type that
appears ``c`` times contributes ``X_t * sum_a a * N_a`` with
``N ~ Multinomial(c, p)``.  This is an exact reformulation and makes the
cost independent of ``n``.  Otherwise weights are drawn directly in chunks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import ZERO_TOL, as_generator, check_odd, check_positive_int, check_sign_matrix
from .momentlab import MAX_ELL, DiscreteRV, YesNoPair, build_no_rv, build_yes_rv, find_mu


@dataclass(frozen=True)
class LTF:
    """``f(x) = sign(w . x - threshold)`` on ``{-1, +1}^n`` with ``sign(0) = +1``."""

    weights: np.ndarray
    threshold: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size == 0:
            raise ValueError("an LTF needs at least one weight")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return int(self.weights.size)

    def __call__(self, x) -> np.ndarray:
        return eval_ltf(self, x)

    def to_dict(self) -> dict:
        out = {"weights": self.weights.tolist()}
        if self.threshold != 0.0:
            out["threshold"] = self.threshold
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LTF":
        return cls(np.asarray(data["weights"], float), float(data.get("threshold", 0.0)))


def eval_ltf(f: LTF, x) -> np.ndarray | int:
    """Evaluate ``f`` at one point (returns an int) or at a stack of points."""
    x = np.asarray(x)
    if x.shape[-1] != f.n:
        raise ValueError(f"point has dimension {x.shape[-1]}, LTF has n={f.n}")
    scale = float(np.abs(f.weights).sum() + abs(f.threshold))
    val = x @ f.weights - f.threshold
    out = np.where(val >= -ZERO_TOL * scale, 1, -1).astype(np.int8)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QueryMatrix:
    """``d`` queries in ``{-1, +1}^n``, stored as int8 signs.

    The scaled entries ``+-1/sqrt(n)`` are produced on demand by
    multiplying the signs by one float, so their magnitudes are bit-exact.
    """

    signs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "signs", check_sign_matrix(self.signs, "query rows"))

    @property
    def d(self) -> int:
        return int(self.signs.shape[0])

    @property
    def n(self) -> int:
        return int(self.signs.shape[1])

    @property
    def entries(self) -> np.ndarray:
        return self.signs * (1.0 / math.sqrt(self.n))

    def column_types(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct columns (as a ``types x d`` sign array) and, per column,
        the index of its type."""
        types, inverse = np.unique(self.signs.T, axis=0, return_inverse=True)
        return types, inverse.ravel()

    def subset(self, rows) -> "QueryMatrix":
        return QueryMatrix(self.signs[np.asarray(rows, dtype=int)])

    def to_dict(self) -> dict:
        return {"n": self.n, "rows": self.signs.astype(int).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "QueryMatrix":
        qm = cls(np.asarray(data["rows"]))
        if "n" in data and int(data["n"]) != qm.n:
            raise ValueError(f"declared n={data['n']} but rows have length {qm.n}")
        return qm

    @classmethod
    def random(cls, d: int, n: int, rng=None) -> "QueryMatrix":
        rng = as_generator(rng)
        return cls(rng.choice(np.array([-1, 1], dtype=np.int8), size=(d, n)))


def choose_h(c: float) -> int:
    """Smallest odd integer ``>= 5 / c``."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    h = max(1, math.ceil(5.0 / c - 1e-12))
    return h if h % 2 else h + 1


@dataclass(frozen=True)
class HardInstanceFamily:
    """Parameters of the yes/no distributions at dimension ``n``.

    ``ell_overridden`` records that ``ell`` was set explicitly rather than
    taken as ``h**3`` (the default order is far beyond what double precision
    supports once ``h > 2``).
    """

    n: int
    h: int
    ell: int
    mu: int
    pair: YesNoPair = field(repr=False)
    c: float | None = None
    ell_overridden: bool = False

    @classmethod
    def build(cls, n: int, *, c: float | None = None, h: int | None = None,
              ell: int | None = None, mu: int | None = None) -> "HardInstanceFamily":
        n = check_positive_int(n, "n")
        if h is None:
            h = choose_h(c if c is not None else 1.0)
        h = check_odd(h, "h")
        overridden = ell is not None
        if ell is None:
            ell = h**3
            if ell > MAX_ELL:
                raise ValueError(
                    f"default ell = h^3 = {ell} exceeds {MAX_ELL}; pass an explicit small ell"
                )
        ell = check_odd(ell, "ell")
        mu = find_mu(ell) if mu is None else check_positive_int(mu, "mu")
        pair = YesNoPair(ell=ell, mu=mu, yes_rv=build_yes_rv(ell, mu), no_rv=build_no_rv(ell, mu))
        return cls(n=n, h=h, ell=ell, mu=mu, pair=pair, c=c, ell_overridden=overridden)

    def describe(self) -> dict:
        return {"n": self.n, "h": self.h, "ell": self.ell, "mu": self.mu, "c": self.c,
                "ell_overridden": self.ell_overridden}


def sample_yes(family: HardInstanceFamily, rng) -> LTF:
    rng = as_generator(rng)
    return LTF(family.pair.yes_rv.sample(family.n, rng))


def sample_no(family: HardInstanceFamily, rng) -> LTF:
    rng = as_generator(rng)
    return LTF(family.pair.no_rv.sample(family.n, rng))


# ---------------------------------------------------------------------------
# Coefficient vectors
# ---------------------------------------------------------------------------


def sample_mixed(qm: QueryMatrix, assignment, rvs, rng, size: int | None = None) -> np.ndarray:
    """Draw ``sum_i w_i X^(i)`` where ``w_i ~ rvs[assignment[i]]``.

    Columns with ``assignment[i] < 0`` are left out.  Returns shape ``(d,)``
    when ``size`` is None, else ``(size, d)``.
    """
    rng = as_generator(rng)
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != (qm.n,):
        raise ValueError(f"assignment must have length n={qm.n}")
    m = 1 if size is None else check_positive_int(size, "size")
    types, inverse = qm.column_types()
    out = np.zeros((m, qm.d))
    for g, rv in enumerate(rvs):
        if rv is None:
            continue
        cols = np.flatnonzero(assignment == g)
        if cols.size == 0:
            continue
        counts = np.bincount(inverse[cols], minlength=types.shape[0])
        used = np.flatnonzero(counts)
        if used.size * GROUPING_RATIO <= cols.size:
            out += _grouped_sum(types[used], counts[used], rv, rng, m)
        else:
            out += _direct_sum(qm.signs[:, cols], rv, rng, m)
    out *= 1.0 / math.sqrt(qm.n)
    return out[0] if size is None else out


# one multinomial draw per column type costs about as much as six direct
# weight draws (measured with numpy's PCG64)
GROUPING_RATIO = 6
_CHUNK_ENTRIES = 1 << 22


def _grouped_sum(types, counts, rv: DiscreteRV, rng, m: int) -> np.ndarray:
    csum = np.empty((m, counts.size))
    for j, c in enumerate(counts):
        csum[:, j] = rng.multinomial(c, rv.probs, size=m) @ rv.atoms
    return csum @ types.astype(float)


def _direct_sum(signs, rv: DiscreteRV, rng, m: int) -> np.ndarray:
    cdf = np.cumsum(rv.probs)
    cdf[-1] = 1.0
    k = signs.shape[1]
    st = signs.T.astype(float)
    out = np.empty((m, signs.shape[0]))
    step = max(1, _CHUNK_ENTRIES // k)
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        u = rng.random((hi - lo, k))
        w = rv.atoms[np.searchsorted(cdf, u, side="right").clip(max=cdf.size - 1)]
        out[lo:hi] = w @ st
    return out


def sample_coeff_vector(qm: QueryMatrix, rv: DiscreteRV, rng, size: int | None = None) -> np.ndarray:
    """``sum_i w_i X^(i)`` with ``w_i`` i.i.d. from ``rv`` (``S`` or ``T``)."""
    return sample_mixed(qm, np.zeros(qm.n, dtype=int), [rv], rng, size)


def hybrid_assignment(n: int, i: int, skip: int | None = None) -> np.ndarray:
    """Column labels for ``Q^(i)``: 1 (no variable) for the first ``i``,
    0 (yes variable) for the rest, -1 for an excluded column ``skip``."""
    if not 0 <= i <= n:
        raise ValueError(f"hybrid index must lie in [0, {n}], got {i}")
    a = np.zeros(n, dtype=int)
    a[:i] = 1
    if skip is not None:
        a[skip] = -1
    return a


def sample_hybrid(qm: QueryMatrix, pair: YesNoPair, i: int, rng,
                  size: int | None = None) -> np.ndarray:
    """``Q^(i)``: first ``i`` coefficients from the no variable, the rest from
    the yes variable, so ``Q^(0) = S`` and ``Q^(n) = T``."""
    return sample_mixed(qm, hybrid_assignment(qm.n, i), [pair.yes_rv, pair.no_rv], rng, size)
