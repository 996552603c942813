"""Monotonicity, exact distance to monotone, and degree-1 spectra.

Points of ``{-1, +1}^n`` are indexed little-endian: bit ``j`` of the index
is 1 exactly when ``x_j = +1``.  Truth tables store ``f`` in that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ._validation import ZERO_TOL, as_generator, check_positive_int

MAX_EXACT_N = 20


@dataclass(frozen=True)
class TruthTable:
    n: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values).astype(np.int8).ravel()
        if vals.size != 1 << self.n:
            raise ValueError(f"truth table for n={self.n} needs {1 << self.n} entries, got {vals.size}")
        if not np.all(np.isin(vals, (-1, 1))):
            raise ValueError("truth-table values must be +1 or -1")
        object.__setattr__(self, "values", vals)

    # bit-array serialization: one bit per point, +1 -> 1, -1 -> 0
    def to_bytes(self) -> bytes:
        return np.packbits(self.values > 0, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, n: int | None = None) -> "TruthTable":
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        if n is None:
            n = int(round(math.log2(bits.size)))
            if bits.size != 1 << n or n < 3:
                raise ValueError("cannot infer n from a bit array shorter than one byte; pass n")
        bits = bits[: 1 << n]
        if bits.size != 1 << n:
            raise ValueError(f"bit array too short for n={n}")
        return cls(n, np.where(bits == 1, 1, -1))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, n: int | None = None) -> "TruthTable":
        return cls.from_bytes(Path(path).read_bytes(), n)

    @classmethod
    def from_function(cls, n: int, f: Callable[[np.ndarray], np.ndarray]) -> "TruthTable":
        """Tabulate a vectorized ``f`` mapping ``(2^n, n)`` points to signs."""
        return cls(n, np.asarray(f(cube_points(n))))


def cube_points(n: int) -> np.ndarray:
    """All points of ``{-1,+1}^n`` as a ``(2^n, n)`` int8 array in index order."""
    idx = np.arange(1 << n)[:, None]
    bits = (idx >> np.arange(n)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def ltf_truth_table(f) -> TruthTable:
    """Truth table of an LTF without materializing the ``2^n x n`` point matrix."""
    n = f.n
    if n > MAX_EXACT_N + 4:
        raise ValueError(f"n={n} too large to tabulate")
    s = np.full(1, -float(f.threshold))
    for w in f.weights:
        # appending the bit-j = 1 half after the bit-j = 0 half
        s = np.concatenate([s - w, s + w])
    scale = float(np.abs(f.weights).sum() + abs(f.threshold))
    return TruthTable(n, np.where(s >= -ZERO_TOL * scale, 1, -1))


def _edge_pairs(values: np.ndarray, n: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    v = values.reshape(1 << (n - 1 - j), 2, 1 << j)
    return v[:, 0, :], v[:, 1, :]


def violating_edges(t: TruthTable) -> int:
    """Number of cube edges ``x < y`` with ``f(x) = +1``, ``f(y) = -1``."""
    total = 0
    for j in range(t.n):
        lo, hi = _edge_pairs(t.values, t.n, j)
        total += int(np.count_nonzero(lo > hi))
    return total


def is_monotone(t: TruthTable) -> bool:
    return violating_edges(t) == 0


@dataclass(frozen=True)
class DistanceResult:
    distance: Fraction
    nearest: TruthTable


def monotone_projection(t: TruthTable) -> DistanceResult:
    """Exact distance to the nearest monotone function and one minimizer.

    Isotone 0/1 regression on the cube order is a minimum s-t cut: a point
    on the source side gets value +1.  Keeping a ``+1`` point on the sink
    side cuts its unit source edge, putting a ``-1`` point on the source
    side cuts its unit sink edge, and the cover edges ``x -> x + e_j`` carry
    capacity ``2^n + 1`` so no optimal cut can violate the order.
    """
    n = t.n
    if n > MAX_EXACT_N:
        raise ValueError(f"exact distance limited to n <= {MAX_EXACT_N}, got {n}")
    N = 1 << n
    src, snk = N, N + 1
    idx = np.arange(N)
    rows, cols, caps = [], [], []
    big = N + 1
    for j in range(n):
        lo = idx[(idx >> j) & 1 == 0]
        rows.append(lo)
        cols.append(lo | (1 << j))
        caps.append(np.full(lo.size, big))
    plus = idx[t.values > 0]
    minus = idx[t.values < 0]
    rows += [np.full(plus.size, src), minus]
    cols += [plus, np.full(minus.size, snk)]
    caps += [np.ones(plus.size), np.ones(minus.size)]
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    cap = sparse.csr_matrix(
        (np.concatenate(caps).astype(np.int32), (r, c)), shape=(N + 2, N + 2)
    )
    res = csgraph.maximum_flow(cap, src, snk, method="dinic")
    cut = int(res.flow_value)
    # source side of a minimum cut = vertices reachable in the residual graph
    residual = (cap - res.flow).tocsr()
    residual.data = (residual.data > 0).astype(np.int8)
    residual.eliminate_zeros()
    reach = csgraph.breadth_first_order(residual, src, directed=True, return_predecessors=False)
    g = -np.ones(N, dtype=np.int8)
    side = reach[reach < N]
    g[side] = 1
    nearest = TruthTable(n, g)
    return DistanceResult(Fraction(cut, N), nearest)


def exact_distance_to_monotone(t: TruthTable) -> Fraction:
    """Minimum disagreement fraction with a monotone function, as ``k / 2^n``."""
    return monotone_projection(t).distance


def fourier_degree1(t: TruthTable) -> np.ndarray:
    """Exact ``f^(i) = E_x[f(x) x_i]`` summed over the table."""
    out = np.empty(t.n)
    vals = t.values.astype(np.int64)
    for j in range(t.n):
        lo, hi = _edge_pairs(vals, t.n, j)
        out[j] = (hi.sum() - lo.sum()) / (1 << t.n)
    return out


def fourier_degree1_mc(f: Callable[[np.ndarray], np.ndarray], n: int, samples: int,
                       rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Sampled degree-1 coefficients and their standard errors for large ``n``."""
    rng = as_generator(rng)
    samples = check_positive_int(samples, "samples")
    x = rng.choice(np.array([-1, 1], dtype=np.int8), size=(samples, n))
    prod = np.asarray(f(x), dtype=float)[:, None] * x
    return prod.mean(axis=0), prod.std(axis=0, ddof=1) / math.sqrt(samples)


def _weights(f) -> np.ndarray:
    w = np.asarray(getattr(f, "weights", f), dtype=float)
    norm = np.linalg.norm(w)
    if norm == 0:
        raise ValueError("weight vector is zero")
    return w / norm


def hermite_degree1(f) -> np.ndarray:
    """``sqrt(2/pi) * v_i / ||v||`` for a zero-threshold LTF."""
    return math.sqrt(2 / math.pi) * _weights(f)


def regularity(f) -> float:
    """``max_i |v_i| / ||v||_2``."""
    return float(np.max(np.abs(_weights(f))))


def fourier_negative_mass(t: TruthTable) -> float:
    """``sum of f^(i)^2`` over coordinates with ``f^(i) < 0``.

    Every monotone ``g`` has ``g^(i) >= 0``, so
    ``dist(f, g) = ||f - g||^2 / 4 >= (1/4) * this mass`` by Parseval.
    """
    fh = fourier_degree1(t)
    return float(np.sum(fh[fh < 0] ** 2))


@dataclass(frozen=True)
class EdgeTestResult:
    accept: bool
    violations: int
    first_hit: int | None
    rounds: int


def edge_tester(oracle: Callable[[np.ndarray], np.ndarray], n: int, q: int, rng=None) -> EdgeTestResult:
    """``q`` rounds of: uniform ``x``, uniform coordinate, query both
    endpoints of the edge through ``x`` in that direction."""
    rng = as_generator(rng)
    q = check_positive_int(q, "q")
    x = rng.choice(np.array([-1, 1], dtype=np.int8), size=(q, n))
    j = rng.integers(0, n, size=q)
    lo, hi = x.copy(), x.copy()
    lo[np.arange(q), j] = -1
    hi[np.arange(q), j] = 1
    bad = (np.asarray(oracle(lo)) > np.asarray(oracle(hi)))
    hits = np.flatnonzero(bad)
    return EdgeTestResult(
        accept=hits.size == 0,
        violations=int(hits.size),
        first_hit=int(hits[0]) + 1 if hits.size else None,
        rounds=q,
    )


def hermite_fourier_gap(f) -> float:
    """``sum_i (f~(i) - f^(i))^2`` with the exact Fourier side (``n <= 20``)."""
    return float(np.sum((hermite_degree1(f) - fourier_degree1(ltf_truth_table(f))) ** 2))
