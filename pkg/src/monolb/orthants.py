"""Union-of-orthants distance between ``S`` and ``T`` and the probes built on it.

``d_UO(S, T)`` is the largest gap ``|Pr[S in O] - Pr[T in O]|`` over unions
``O`` of orthants.  Each point belongs to exactly one orthant under the
``sign(0) = +1`` convention, so the maximizing union collects the patterns
where ``P_S > P_T`` and the distance equals the total variation between the
two sign-pattern distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._validation import as_generator, check_positive_int, signs_of
from .instances import QueryMatrix, hybrid_assignment, sample_coeff_vector, sample_mixed
from .mollifier import OrthantMollifier
from .momentlab import DiscreteRV, YesNoPair

EXACT_GUARD = 10**7
_ENUM_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# Sign patterns
# ---------------------------------------------------------------------------


def sign_pattern(v, scale: float | None = None) -> np.ndarray:
    """Coordinatewise sign with ``sign(0) = +1``."""
    return signs_of(v, scale)


def pattern_keys(patterns: np.ndarray) -> np.ndarray:
    """Hashable, sortable key per sign row (int64 for ``d <= 62``)."""
    patterns = np.atleast_2d(patterns)
    d = patterns.shape[1]
    if d <= 62:
        return ((patterns > 0).astype(np.int64) << np.arange(d, dtype=np.int64)).sum(axis=1)
    packed = np.ascontiguousarray(np.packbits(patterns > 0, axis=1, bitorder="little"))
    return packed.view(f"V{packed.shape[1]}").ravel()


def key_to_pattern(key, d: int) -> tuple:
    if isinstance(key, (int, np.integer)):
        return tuple(1 if (int(key) >> j) & 1 else -1 for j in range(d))
    bits = np.unpackbits(np.frombuffer(bytes(key), np.uint8), bitorder="little")[:d]
    return tuple(2 * int(b) - 1 for b in bits)


@dataclass(frozen=True)
class SignPatternDistribution:
    """Probability mass over sign patterns, stored by pattern key."""

    d: int
    keys: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError("pattern masses must sum to 1")

    @property
    def mass(self) -> dict:
        return {key_to_pattern(k, self.d): float(p) for k, p in zip(self.keys, self.probs)}

    @classmethod
    def from_weighted(cls, d: int, keys: np.ndarray, weights: np.ndarray) -> "SignPatternDistribution":
        uniq, inv = np.unique(keys, return_inverse=True)
        probs = np.bincount(inv.ravel(), weights=weights, minlength=uniq.size)
        # fsum is exact, so the result does not depend on the key order
        return cls(d, uniq, probs / math.fsum(probs))


def tv_distance(p: SignPatternDistribution, q: SignPatternDistribution) -> float:
    keys = np.union1d(p.keys, q.keys)
    a = np.zeros(keys.size)
    b = np.zeros(keys.size)
    a[np.searchsorted(keys, p.keys)] = p.probs
    b[np.searchsorted(keys, q.keys)] = q.probs
    return 0.5 * math.fsum(np.abs(a - b))


def best_union(p: SignPatternDistribution, q: SignPatternDistribution) -> list:
    """Patterns with ``P > Q``: the union attaining the distance."""
    m = q.mass
    return [k for k, v in p.mass.items() if v > m.get(k, 0.0)]


@dataclass(frozen=True)
class DuoEstimate:
    value: float
    stderr: float
    method: str
    samples: int
    bias_bound: float = 0.0

    def __post_init__(self):
        if self.method not in ("exact", "monte_carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "exact" and self.stderr != 0:
            raise ValueError("exact estimates carry no stderr")
        if not 0 <= self.value <= 1:
            raise ValueError(f"distance {self.value} outside [0, 1]")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


def _sign_scale(qm: QueryMatrix, rv: DiscreteRV) -> float:
    # |S_j| is at most beta * sqrt(n); ties are judged relative to that
    return max(1.0, rv.max_abs() * math.sqrt(qm.n))


def exact_pattern_distribution(qm: QueryMatrix, rv: DiscreteRV) -> SignPatternDistribution:
    """Sign-pattern law of ``sum_i w_i X^(i)`` by enumerating all
    ``support^n`` weight assignments."""
    s, n = rv.support_size, qm.n
    total = s**n
    if total > EXACT_GUARD:
        raise ValueError(f"exact enumeration needs {s}^{n} = {total} > {EXACT_GUARD} combinations")
    x = qm.entries.T  # (n, d)
    scale = _sign_scale(qm, rv)
    logp = np.log(rv.probs)
    keys_all, w_all = [], []
    radix = s ** np.arange(n, dtype=np.int64)
    for lo in range(0, total, _ENUM_CHUNK):
        idx = np.arange(lo, min(total, lo + _ENUM_CHUNK), dtype=np.int64)
        digits = (idx[:, None] // radix[None, :]) % s
        vec = rv.atoms[digits] @ x
        keys_all.append(pattern_keys(sign_pattern(vec, scale)))
        w_all.append(np.exp(logp[digits].sum(axis=1)))
    return SignPatternDistribution.from_weighted(qm.d, np.concatenate(keys_all), np.concatenate(w_all))


def duo_exact_small(qm: QueryMatrix, pair: YesNoPair) -> DuoEstimate:
    """Exact ``d_UO`` by full enumeration of both coefficient laws."""
    ps = exact_pattern_distribution(qm, pair.yes_rv)
    pt = exact_pattern_distribution(qm, pair.no_rv)
    return DuoEstimate(value=tv_distance(ps, pt), stderr=0.0, method="exact", samples=0)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class PatternCounts:
    """Joint tally of sign patterns from S-samples and T-samples.

    Counts merge by addition, so chunked or parallel runs give the same
    totals regardless of how the work was split.
    """

    d: int
    keys: np.ndarray
    counts_s: np.ndarray
    counts_t: np.ndarray

    @classmethod
    def from_samples(cls, s: np.ndarray, t: np.ndarray, scale: float = 1.0) -> "PatternCounts":
        ks = pattern_keys(sign_pattern(s, scale))
        kt = pattern_keys(sign_pattern(t, scale))
        keys, inv = np.unique(np.concatenate([ks, kt]), return_inverse=True)
        inv = inv.ravel()
        cs = np.bincount(inv[: ks.size], minlength=keys.size)
        ct = np.bincount(inv[ks.size:], minlength=keys.size)
        return cls(s.shape[1], keys, cs, ct)

    def merge(self, other: "PatternCounts") -> "PatternCounts":
        keys, inv = np.unique(np.concatenate([self.keys, other.keys]), return_inverse=True)
        inv = inv.ravel()
        cs = np.bincount(inv, weights=np.concatenate([self.counts_s, other.counts_s]), minlength=keys.size)
        ct = np.bincount(inv, weights=np.concatenate([self.counts_t, other.counts_t]), minlength=keys.size)
        return PatternCounts(self.d, keys, cs.astype(np.int64), ct.astype(np.int64))

    @property
    def n_s(self) -> int:
        return int(self.counts_s.sum())

    @property
    def n_t(self) -> int:
        return int(self.counts_t.sum())

    def tv(self) -> float:
        return float(0.5 * np.abs(self.counts_s / self.n_s - self.counts_t / self.n_t).sum())

    def bootstrap_stderr(self, rng, resamples: int = 200, work_cap: int = 40_000_000) -> tuple[float, int]:
        """Bootstrap stderr of :meth:`tv`.

        Multinomial resampling of the count vectors; when there are many
        distinct patterns the Poisson bootstrap is used, and the number of
        resamples is reduced so that ``resamples * patterns <= work_cap``
        (never below 30).  Returns ``(stderr, resamples_used)``.
        """
        rng = as_generator(rng)
        k = self.keys.size
        b = int(min(resamples, max(30, work_cap // max(k, 1))))
        vals = np.empty(b)
        ps = self.counts_s / self.n_s
        pt = self.counts_t / self.n_t
        for r in range(b):
            if k <= 4096:
                cs = rng.multinomial(self.n_s, ps)
                ct = rng.multinomial(self.n_t, pt)
            else:
                cs = rng.poisson(self.counts_s)
                ct = rng.poisson(self.counts_t)
            vals[r] = 0.5 * np.abs(cs / max(cs.sum(), 1) - ct / max(ct.sum(), 1)).sum()
        return float(vals.std(ddof=1)), b

    def estimate(self, rng, resamples: int = 200) -> DuoEstimate:
        se, _ = self.bootstrap_stderr(rng, resamples)
        m = min(self.n_s, self.n_t)
        return DuoEstimate(
            value=self.tv(),
            stderr=se,
            method="monte_carlo",
            samples=m,
            bias_bound=plugin_bias_bound(self.d, m),
        )

    def restrict(self, rows) -> "PatternCounts":
        """Counts of the sub-pattern on ``rows`` (the patterns of a row subset of X)."""
        rows = np.asarray(rows, dtype=np.int64)
        if self.keys.dtype.kind == "i":
            bits = (self.keys[:, None] >> rows[None, :]) & 1
            sub = pattern_keys(2 * bits.astype(np.int8) - 1)
        else:
            full = np.array([key_to_pattern(k, self.d) for k in self.keys], dtype=np.int8)
            sub = pattern_keys(full[:, rows])
        keys, inv = np.unique(sub, return_inverse=True)
        inv = inv.ravel()
        return PatternCounts(
            rows.size, keys,
            np.bincount(inv, weights=self.counts_s, minlength=keys.size).astype(np.int64),
            np.bincount(inv, weights=self.counts_t, minlength=keys.size).astype(np.int64),
        )


def plugin_bias_bound(d: int, samples: int) -> float:
    """Additive bias bound ``sqrt(2^d / samples)`` of the plug-in TV (capped at 1)."""
    return float(min(1.0, math.sqrt(2.0 ** min(d, 1000) / samples)))


def duo_counts(qm: QueryMatrix, pair: YesNoPair, samples: int, rng,
               chunk: int = 250_000) -> PatternCounts:
    rng = as_generator(rng)
    scale = max(_sign_scale(qm, pair.yes_rv), _sign_scale(qm, pair.no_rv))
    total = None
    for lo in range(0, samples, chunk):
        m = min(chunk, samples - lo)
        s = sample_coeff_vector(qm, pair.yes_rv, rng, size=m)
        t = sample_coeff_vector(qm, pair.no_rv, rng, size=m)
        c = PatternCounts.from_samples(s, t, scale)
        total = c if total is None else total.merge(c)
    return total


def duo_monte_carlo(qm: QueryMatrix, pair: YesNoPair, samples: int, rng=None,
                    resamples: int = 200) -> DuoEstimate:
    """Plug-in TV between empirical sign-pattern laws of ``S`` and ``T``."""
    samples = check_positive_int(samples, "samples", minimum=10_000)
    rng = as_generator(rng)
    return duo_counts(qm, pair, samples, rng).estimate(rng, resamples)


# ---------------------------------------------------------------------------
# Lindeberg replacement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCValue:
    value: float
    stderr: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _expect_over_atom(psi, base: np.ndarray, col: np.ndarray, rv: DiscreteRV) -> np.ndarray:
    out = np.zeros(base.shape[0])
    for a, p in zip(rv.atoms, rv.probs):
        out += p * psi(base + a * col)
    return out


def lindeberg_step_gap(qm: QueryMatrix, pair: YesNoPair, orthant_union, i: int, eps: float,
                       samples: int, rng=None, mollifier: OrthantMollifier | None = None) -> MCValue:
    """Estimate ``E[Psi_O(Q^(i-1))] - E[Psi_O(Q^(i))]`` for ``1 <= i <= n``.

    Both hybrids share ``R_{-i}`` (coefficients ``1..i-1`` from ``v`` and
    ``i+1..n`` from ``u``) and differ only in coordinate ``i``.  Averaging
    the ``i``-th coefficient out exactly (a conditional expectation over
    its finitely many atoms) removes that source of noise; the returned
    value is signed, its magnitude is the step gap.
    """
    if not 1 <= i <= qm.n:
        raise ValueError(f"step index must lie in [1, {qm.n}], got {i}")
    rng = as_generator(rng)
    psi = mollifier if mollifier is not None else OrthantMollifier(np.asarray(orthant_union), eps)
    assignment = hybrid_assignment(qm.n, i - 1, skip=i - 1)
    r = sample_mixed(qm, assignment, [pair.yes_rv, pair.no_rv], rng, size=samples)
    col = qm.entries[:, i - 1]
    diff = _expect_over_atom(psi, r, col, pair.yes_rv) - _expect_over_atom(psi, r, col, pair.no_rv)
    return MCValue(float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(samples)), samples)


def psi_expectation(qm: QueryMatrix, rv: DiscreteRV, mollifier: OrthantMollifier,
                    samples: int, rng=None) -> MCValue:
    """``E[Psi_O(sum_i w_i X^(i))]`` with ``w_i ~ rv``."""
    z = sample_coeff_vector(qm, rv, as_generator(rng), size=samples)
    v = mollifier(z)
    return MCValue(float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples)), samples)


def psi_gap(qm: QueryMatrix, pair: YesNoPair, mollifier: OrthantMollifier, samples: int, rng=None) -> MCValue:
    """Direct estimate of ``E[Psi_O(S)] - E[Psi_O(T)]``."""
    rng = as_generator(rng)
    a = psi_expectation(qm, pair.yes_rv, mollifier, samples, rng)
    b = psi_expectation(qm, pair.no_rv, mollifier, samples, rng)
    return MCValue(a.value - b.value, math.hypot(a.stderr, b.stderr), samples)


# ---------------------------------------------------------------------------
# Anticoncentration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnticoncentrationParams:
    eps: float
    delta: float
    beta: float

    def __post_init__(self):
        if not (self.eps > 0 and self.delta > 0 and self.beta > 0):
            raise ValueError("eps, delta and beta must be positive")

    @classmethod
    def defaults(cls, n: int, h: int, pair: YesNoPair) -> "AnticoncentrationParams":
        """``eps = n^(4/h - 1/2)``, ``delta = n^(-1/2)``, ``beta`` = largest atom magnitude."""
        return cls(eps=n ** (4.0 / h - 0.5), delta=n**-0.5, beta=pair.beta())

    @property
    def half_width(self) -> float:
        return self.eps + self.beta * self.delta


def anticoncentration_probe(qm: QueryMatrix, pair: YesNoPair, I, params: AnticoncentrationParams,
                            i: int, samples: int, rng=None, half_width: float | None = None) -> MCValue:
    """``Pr[(R_{-i})|_I in [-w, w]^|I|]`` with ``w = eps + beta * delta``."""
    rows = np.asarray(I, dtype=int)
    if not 1 <= i <= qm.n:
        raise ValueError(f"i must lie in [1, {qm.n}]")
    w = params.half_width if half_width is None else half_width
    sub = qm.subset(rows)
    r = sample_mixed(sub, hybrid_assignment(qm.n, i - 1, skip=i - 1),
                     [pair.yes_rv, pair.no_rv], as_generator(rng), size=samples)
    hit = np.all(np.abs(r) <= w, axis=1).astype(float)
    return MCValue(float(hit.mean()), float(hit.std(ddof=1) / math.sqrt(samples)), samples)


def gaussian_box_prob(a_rows, lo, hi, samples: int, rng=None, mu: float = 0.0) -> MCValue:
    """``Pr[G in [lo, hi]]`` for ``G ~ N(mu * A 1, A A^T)``.

    The covariance square root comes from an eigendecomposition with
    negative round-off eigenvalues clipped, so singular ``A A^T`` is fine.
    """
    a = np.atleast_2d(np.asarray(a_rows, dtype=float))
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (a.shape[0],))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (a.shape[0],))
    mean = mu * a.sum(axis=1)
    lam, vec = np.linalg.eigh(a @ a.T)
    root = vec * np.sqrt(np.clip(lam, 0.0, None))
    z = as_generator(rng).standard_normal((samples, a.shape[0]))
    g = mean + z @ root.T
    hit = np.all((g >= lo) & (g <= hi), axis=1).astype(float)
    return MCValue(float(hit.mean()), float(hit.std(ddof=1) / math.sqrt(samples)), samples)


def gaussian_window_mass(center: float, sd: float, half_width: float) -> float:
    """``Pr[|N(center, sd^2)| <= half_width]``, the 1-D reference for probes."""
    return float(stats.norm.cdf((half_width - center) / sd) - stats.norm.cdf((-half_width - center) / sd))
