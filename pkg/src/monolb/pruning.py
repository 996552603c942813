"""Partition, scatteredness test and iterative pruning of query sets.

A query set ``X`` is a set of cube points.  For a small subset ``A`` and a
radius ``r`` the points of ``X`` within ``r`` of ``span(A)`` (other than
``A``) split into incompatible points, one representative per cube
rounding (``cover``) and the rest (``remove``).  ``X`` is scattered when
``|remove| <= r |X| log^p n`` for every ``A`` with ``|A| <= h`` and every
``r > 0``; pruning deletes ``remove`` lists until that holds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._validation import as_generator, check_positive_int
from .geometry import (
    CubePointSet,
    compatibility,
    cover_set,
    dedup_rows,
    hamming,
    low_weight_gamma1,
    round_to_cube,
    span_dist_sq_exact,
    span_residuals,
)
from .instances import QueryMatrix, sample_coeff_vector
from .momentlab import YesNoPair
from .orthants import DuoEstimate, _sign_scale, duo_counts

_RADIUS_RTOL = 1e-12


class PruningError(RuntimeError):
    """A partition broke one of its guaranteed properties."""


@dataclass(frozen=True)
class PruneParams:
    """Thresholds for partition, scatteredness and pruning.

    ``eps`` defaults to ``n^(4/h - 1/2)``.  ``gamma1`` defaults to the
    largest realized low-weight coefficient over the points of ``X``
    (at least 1).  Logs are natural and need ``n >= min_n``.
    """

    eps: float | None = None
    log_power: float = 5.0
    gap_log_power: float = 2.0
    gamma1: float | None = None
    exhaustive_budget: int = 2_000_000
    sampled_subsets: int = 10_000
    seed: int = 0
    min_n: int = 8

    def log_n(self, n: int) -> float:
        if n < self.min_n:
            raise ValueError(f"pruning thresholds need n >= {self.min_n}, got n={n}")
        return math.log(n)

    def resolve_eps(self, n: int, h: int) -> float:
        return float(n ** (4.0 / h - 0.5)) if self.eps is None else float(self.eps)

    def threshold(self, r: float, size: int, n: int) -> float:
        return r * size * self.log_n(n) ** self.log_power

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _as_sign_rows(x) -> np.ndarray:
    if isinstance(x, (CubePointSet, QueryMatrix)):
        return np.asarray(x.signs, dtype=np.int8)
    return np.atleast_2d(np.asarray(x)).astype(np.int8)


# ---------------------------------------------------------------------------
# Shared per-call state
# ---------------------------------------------------------------------------


class _Context:
    """Caches keyed by point content, so they survive removals."""

    def __init__(self, n: int, h: int, params: PruneParams):
        self.n, self.h, self.params = n, h, params
        self.eps = params.resolve_eps(n, h)
        self.log_n = params.log_n(n)
        self.compat: dict = {}
        self.gamma: dict = {}

    def gamma1(self, a_rows: np.ndarray, x_rows: np.ndarray) -> float:
        if self.params.gamma1 is not None:
            return float(self.params.gamma1)
        key = a_rows.tobytes()
        if key not in self.gamma:
            a = CubePointSet(self.n, a_rows)
            a_set = {r.tobytes() for r in a_rows}
            rest = np.array([w for w in x_rows if w.tobytes() not in a_set]).reshape(-1, self.n)
            vals = low_weight_gamma1(rest, a) if rest.size else np.zeros(0)
            self.gamma[key] = float(max(1.0, vals.max(initial=0.0)))
        return self.gamma[key]

    def is_compatible(self, a_rows: np.ndarray, w: np.ndarray, gamma1: float) -> bool:
        key = (a_rows.tobytes(), w.tobytes(), gamma1)
        if key not in self.compat:
            self.compat[key] = self._decide(a_rows, w, gamma1)
        return self.compat[key]

    def _decide(self, a_rows, w, gamma1) -> bool:
        # |sum(V - U)| <= |sum V| + gamma1 * sum_j |sum V^(j)|; below the
        # envelope's floor eps * log n the point is compatible for every beta
        rootn = math.sqrt(self.n)
        bound = abs(int(w.sum())) / rootn + gamma1 * np.abs(a_rows.sum(axis=1)).sum() / rootn
        if bound <= self.eps * self.log_n:
            return True
        return compatibility(w, CubePointSet(self.n, a_rows), self.eps, gamma1, self.log_n).compatible

    def class_labels(self, a_rows: np.ndarray, w_rows: np.ndarray) -> np.ndarray:
        """Index of the nearest cover point for each row of ``w_rows``.

        Ties are broken toward the rounding of the point's own projection,
        then toward the lower cover index.
        """
        a = CubePointSet(self.n, a_rows)
        cov = cover_set(a).signs
        u = w_rows / math.sqrt(self.n) - span_residuals(w_rows / math.sqrt(self.n), a.points)
        own = round_to_cube(u)
        out = np.empty(w_rows.shape[0], dtype=np.int64)
        for j, (w, o) in enumerate(zip(w_rows, own)):
            d = hamming(cov, w)
            best = np.flatnonzero(d == d.min())
            hit = np.flatnonzero(np.all(cov[best] == o, axis=1))
            out[j] = best[hit[0]] if hit.size else best[0]
        return out


# ---------------------------------------------------------------------------
# Partition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionResult:
    """Indices (into ``x``) of the three parts of ``R``."""

    cover: np.ndarray
    remove: np.ndarray
    incomp: np.ndarray
    r: float
    a: CubePointSet
    representative: np.ndarray = field(repr=False)
    gamma1: float = 1.0

    def to_dict(self) -> dict:
        return {"cover": self.cover.tolist(), "remove": self.remove.tolist(),
                "incomp": self.incomp.tolist(), "r": self.r, "gamma1": self.gamma1}


def _partition(ctx: _Context, x_rows: np.ndarray, a_idx, r: float, d2: np.ndarray | None = None) -> PartitionResult:
    a_idx = np.asarray(a_idx, dtype=np.int64)
    a_rows = x_rows[a_idx]
    if d2 is None:
        d2 = span_dist_sq_exact(x_rows, a_rows)
    mask = d2 <= r * r * (1 + _RADIUS_RTOL)
    mask[a_idx] = False
    region = np.flatnonzero(mask)
    g1 = ctx.gamma1(a_rows, x_rows) if region.size else 1.0
    comp = np.array([ctx.is_compatible(a_rows, x_rows[i], g1) for i in region], dtype=bool)
    incomp = region[~comp]
    rest = region[comp]
    labels = ctx.class_labels(a_rows, x_rows[rest]) if rest.size else np.zeros(0, np.int64)
    cover, remove, rep = [], [], []
    for lab in np.unique(labels):
        members = rest[labels == lab]
        order = np.lexsort((members, d2[members]))
        head = members[order[0]]
        cover.append(head)
        for other in members[order[1:]]:
            remove.append(other)
            rep.append(head)
    h = ctx.h
    if len(cover) > 2 ** (h * h):
        raise PruningError(f"cover has {len(cover)} points, more than 2^(h^2) = {2 ** (h * h)}")
    res = PartitionResult(np.array(sorted(cover), dtype=np.int64), np.array(remove, dtype=np.int64),
                          incomp, float(r), CubePointSet(ctx.n, a_rows), np.array(rep, dtype=np.int64), g1)
    _check_partition(ctx, x_rows, res)
    return res


def _check_partition(ctx: _Context, x_rows: np.ndarray, res: PartitionResult) -> None:
    if res.remove.size == 0:
        return
    pts = x_rows / math.sqrt(ctx.n)
    gap = np.linalg.norm(pts[res.remove] - pts[res.representative], axis=1)
    if np.any(gap > 4 * res.r * (1 + 1e-9) + 1e-12):
        raise PruningError("a removed point is farther than 4r from its cover point")
    limit = (res.r + ctx.eps) * ctx.log_n**ctx.params.gap_log_power
    for v in res.cover:
        close = res.remove[np.linalg.norm(pts[res.remove] - pts[v], axis=1) <= 4 * res.r * (1 + 1e-9)]
        sums = np.abs((pts[v] - pts[close]).sum(axis=1))
        if sums.size and sums.max() > limit:
            raise PruningError(
                f"coordinate-sum gap {sums.max():.6g} exceeds (r + eps) log^{ctx.params.gap_log_power} n"
                f" = {limit:.6g} for cover point {int(v)} at r={res.r:.6g}")


def partition_r(x, a, r: float, h: int = 3, params: PruneParams | None = None) -> PartitionResult:
    """Partition ``R = (X within r of span(A)) minus A``.

    ``a`` holds indices into ``x`` (``A`` must be part of ``X``).  Indices
    in the result refer to the rows of the deduplicated ``x``.
    """
    params = params or PruneParams()
    rows, _ = dedup_rows(_as_sign_rows(x))
    a_idx = np.atleast_1d(np.asarray(a, dtype=np.int64))
    if not 0 < a_idx.size <= h:
        raise ValueError(f"need 0 < |A| <= h={h}")
    if r < 0:
        raise ValueError("r must be nonnegative")
    return _partition(_Context(rows.shape[1], h, params), rows, a_idx, r)


# ---------------------------------------------------------------------------
# Scatteredness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    a: tuple
    r: float
    removed: int
    threshold: float

    def to_dict(self) -> dict:
        return {"a": list(self.a), "r": self.r, "removed": self.removed, "threshold": self.threshold}


@dataclass(frozen=True)
class ScatterReport:
    scattered: bool
    violations: list
    mode: str
    subsets_checked: int
    subsets_total: int

    def to_dict(self) -> dict:
        return {"scattered": self.scattered, "mode": self.mode,
                "subsets_checked": self.subsets_checked, "subsets_total": self.subsets_total,
                "violations": [v.to_dict() for v in self.violations]}


def _subset_plan(m: int, h: int, params: PruneParams):
    total = sum(math.comb(m, s) for s in range(1, min(h, m) + 1))
    if total <= params.exhaustive_budget:
        return "exhaustive", total, None
    return "sampled", total, as_generator(params.seed)


def _subsets(m: int, h: int, mode: str, rng, params: PruneParams):
    """Blocks of subsets (as index arrays), sizes 1..h, lexicographic within a size."""
    for s in range(1, min(h, m) + 1):
        if mode == "exhaustive" or math.comb(m, s) <= params.sampled_subsets:
            it = itertools.combinations(range(m), s)
            while True:
                block = np.array(list(itertools.islice(it, 4096)), dtype=np.int64).reshape(-1, s)
                if block.size == 0:
                    break
                yield block
        else:
            seen = set()
            while len(seen) < params.sampled_subsets:
                seen.add(tuple(sorted(rng.choice(m, s, replace=False).tolist())))
            block = np.array(sorted(seen), dtype=np.int64)
            for lo in range(0, block.shape[0], 4096):
                yield block[lo:lo + 4096]


def _block_dist_sq(x_rows: np.ndarray, gram: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Exact squared span distances of every point to each subset in ``block``."""
    b, s = block.shape
    m = x_rows.shape[0]
    n = x_rows.shape[1]
    ga = gram[block[:, :, None], block[:, None, :]].astype(float)  # (b, s, s)
    det_a = np.rint(np.linalg.det(ga))
    out = np.empty((b, m))
    good = det_a != 0
    if np.any(good):
        gb = ga[good]
        g = gram[block[good]].transpose(0, 2, 1).astype(float)  # (bg, m, s)
        border = np.empty((gb.shape[0], m, s + 1, s + 1))
        border[:, :, :s, :s] = gb[:, None]
        border[:, :, :s, s] = g
        border[:, :, s, :s] = g
        border[:, :, s, s] = n
        out[good] = np.rint(np.linalg.det(border)) / (n * det_a[good][:, None])
    for j in np.flatnonzero(~good):
        out[j] = span_dist_sq_exact(x_rows, x_rows[block[j]])
    return out


def _candidates(d2: np.ndarray, a_idx: np.ndarray, size: int, log_term: float) -> np.ndarray:
    """Positive critical radii (squared) where ``|R(r)| - 1 > r |X| log^p n`` could hold."""
    d = d2.copy()
    d[a_idx] = np.inf
    srt = np.sort(d)
    srt = srt[np.isfinite(srt)]
    count = np.searchsorted(srt, srt, side="right")
    ok = (srt > 0) & (count - 1 > np.sqrt(srt) * size * log_term)
    return np.unique(srt[ok])


def _largest_violation(ctx: _Context, x_rows: np.ndarray, a_idx: np.ndarray, d2: np.ndarray,
                       cand: np.ndarray) -> tuple[float, int, float] | None:
    """Largest critical radius where ``A`` violates the threshold, if any."""
    size = x_rows.shape[0]
    log_term = ctx.log_n**ctx.params.log_power
    d = d2.copy()
    d[a_idx] = np.inf
    rmax2 = cand.max()
    region = np.flatnonzero(d <= rmax2 * (1 + _RADIUS_RTOL))
    a_rows = x_rows[a_idx]
    labels = ctx.class_labels(a_rows, x_rows[region])
    # |R'| - classes(R') <= |R| - classes(R): check the cheap bound first
    upper = []
    for r2 in cand:
        inside = d[region] <= r2 * (1 + _RADIUS_RTOL)
        upper.append(int(inside.sum()) - np.unique(labels[inside]).size)
    live = [r2 for r2, u in zip(cand, upper) if u > math.sqrt(r2) * size * log_term]
    if not live:
        return None
    g1 = ctx.gamma1(a_rows, x_rows)
    comp = np.array([ctx.is_compatible(a_rows, x_rows[i], g1) for i in region], dtype=bool)
    for r2 in sorted(live, reverse=True):
        inside = (d[region] <= r2 * (1 + _RADIUS_RTOL)) & comp
        removed = int(inside.sum()) - np.unique(labels[inside]).size
        thr = math.sqrt(r2) * size * log_term
        if removed > thr:
            return math.sqrt(r2), removed, thr
    return None


def _scan(ctx: _Context, x_rows: np.ndarray, stop_first: bool):
    m = x_rows.shape[0]
    mode, total, rng = _subset_plan(m, ctx.h, ctx.params)
    gram = x_rows.astype(np.int64) @ x_rows.astype(np.int64).T
    log_term = ctx.log_n**ctx.params.log_power
    violations, checked = [], 0
    for block in _subsets(m, ctx.h, mode, rng, ctx.params):
        d2 = _block_dist_sq(x_rows, gram, block)
        checked += block.shape[0]
        for a_idx, row in zip(block, d2):
            cand = _candidates(row, a_idx, m, log_term)
            if cand.size == 0:
                continue
            hit = _largest_violation(ctx, x_rows, a_idx, row, cand)
            if hit is not None:
                violations.append((a_idx.copy(), hit, row))
                if stop_first:
                    return violations, mode, checked, total
    return violations, mode, checked, total


def is_scattered(x, h: int, params: PruneParams | None = None) -> ScatterReport:
    """Check ``|remove| <= r |X| log^p n`` for all ``A`` with ``|A| <= h`` at
    every critical radius (distances of points of ``X`` to ``span(A)``)."""
    params = params or PruneParams()
    rows, keep = dedup_rows(_as_sign_rows(x))
    if rows.shape[0] == 0:
        raise ValueError("x must contain at least one point")
    ctx = _Context(rows.shape[1], check_positive_int(h, "h"), params)
    found, mode, checked, total = _scan(ctx, rows, stop_first=False)
    viol = [Violation(tuple(int(keep[i]) for i in a), r, removed, thr) for a, (r, removed, thr), _ in found]
    return ScatterReport(not viol, viol, mode, checked, total)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PruneStep:
    a: tuple
    r: float
    removed: tuple
    size_before: int
    representatives: tuple = ()

    def to_dict(self) -> dict:
        return {"a": list(self.a), "r": self.r, "removed": list(self.removed),
                "size_before": self.size_before, "representatives": list(self.representatives)}


@dataclass(frozen=True)
class PruneTrace:
    """Steps of a pruning run; indices refer to rows of the input."""

    steps: list
    initial_size: int
    final_size: int
    kept: np.ndarray
    mode: str

    def telescoping_sum(self) -> Fraction:
        return sum((Fraction(len(s.removed), s.size_before) for s in self.steps), Fraction(0))

    def telescoping_bound(self) -> float:
        return 2 * math.log(self.initial_size) if self.initial_size > 1 else 0.0

    def radius_sum(self) -> float:
        return float(sum(s.r for s in self.steps))

    def to_dict(self) -> dict:
        return {
            "initial_size": self.initial_size, "final_size": self.final_size,
            "kept": self.kept.tolist(), "mode": self.mode,
            "radius_sum": self.radius_sum(),
            "telescoping_sum": float(self.telescoping_sum()),
            "steps": [s.to_dict() for s in self.steps],
        }


def prune(x, h: int, params: PruneParams | None = None) -> tuple[CubePointSet, PruneTrace]:
    """Remove ``remove`` lists of violating ``(A, r)`` until ``X`` is scattered.

    Duplicates are dropped first (recorded as a step with empty ``A`` and
    ``r = 0``).  Subsets are scanned by size ``1..h`` and lexicographically
    within a size; for the first violating ``A`` the largest violating
    critical radius is used.
    """
    params = params or PruneParams()
    h = check_positive_int(h, "h")
    raw = _as_sign_rows(x)
    if raw.shape[0] == 0:
        raise ValueError("x must contain at least one point")
    rows, keep = dedup_rows(raw)
    steps = []
    if rows.shape[0] < raw.shape[0]:
        dropped = tuple(int(i) for i in np.setdiff1d(np.arange(raw.shape[0]), keep))
        steps.append(PruneStep((), 0.0, dropped, raw.shape[0]))
    ctx = _Context(rows.shape[1], h, params)
    ids = keep.copy()
    mode = _subset_plan(rows.shape[0], h, params)[0]
    while True:
        found, mode, _, _ = _scan(ctx, rows, stop_first=True)
        if not found:
            break
        a_idx, (r, _, _), d2 = found[0]
        part = _partition(ctx, rows, a_idx, r, d2)
        if part.remove.size == 0:
            raise PruningError("violating pair produced an empty remove list")
        steps.append(PruneStep(tuple(int(ids[i]) for i in a_idx), r,
                               tuple(int(ids[i]) for i in part.remove), rows.shape[0],
                               tuple(int(ids[i]) for i in part.representative)))
        survive = np.setdiff1d(np.arange(rows.shape[0]), part.remove)
        rows, ids = rows[survive], ids[survive]
    trace = PruneTrace(steps, raw.shape[0], rows.shape[0], ids, mode)
    return CubePointSet(rows.shape[1], rows), trace


def verify_trace(x, trace: PruneTrace) -> bool:
    """Re-check from the input that every removed point lay within ``r_i``
    of ``span(A_i)`` and that sizes strictly decrease."""
    raw = _as_sign_rows(x)
    size = trace.initial_size
    for s in trace.steps:
        if s.size_before != size or not s.removed:
            return False
        if s.a:
            d2 = span_dist_sq_exact(raw[list(s.removed)], raw[list(s.a)])
            if np.any(d2 > s.r * s.r * (1 + 1e-9)):
                return False
        size -= len(s.removed)
    return size == trace.final_size


# ---------------------------------------------------------------------------
# Empirical checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftReport:
    before: DuoEstimate
    after: DuoEstimate
    drift: float
    combined_stderr: float

    def within(self, tol: float = 0.02, k: float = 3.0) -> bool:
        return abs(self.drift) <= tol + k * self.combined_stderr

    def to_dict(self) -> dict:
        return {"before": self.before.to_dict(), "after": self.after.to_dict(),
                "drift": self.drift, "combined_stderr": self.combined_stderr}


def _row_positions(x_rows: np.ndarray, sub_rows: np.ndarray) -> np.ndarray:
    index = {}
    for i, r in enumerate(x_rows):
        index.setdefault(r.tobytes(), i)
    try:
        return np.array([index[r.tobytes()] for r in sub_rows], dtype=np.int64)
    except KeyError as exc:
        raise ValueError("pruned_x must be a subset of x") from exc


def duo_drift_check(x, pruned_x, pair: YesNoPair, samples: int, rng=None,
                    resamples: int = 200) -> DriftReport:
    """``d_UO`` of ``x`` and of ``pruned_x`` from one set of draws.

    ``pruned_x`` is a row subset of ``x``, so its sign patterns are the
    restriction of the patterns of ``x``; one sample of ``S`` and ``T``
    serves both estimates.
    """
    rng = as_generator(rng)
    xr = _as_sign_rows(x)
    pr = _as_sign_rows(pruned_x)
    rows = _row_positions(xr, pr)
    counts = duo_counts(QueryMatrix(xr), pair, samples, rng)
    before = counts.estimate(rng, resamples)
    after = counts.restrict(rows).estimate(rng, resamples)
    return DriftReport(before, after, before.value - after.value, math.hypot(before.stderr, after.stderr))


def bad_orthant_mass(x, step: PruneStep, pair: YesNoPair, samples: int, rng=None) -> float:
    """Probability that ``S`` signs some (representative, removed) pair of a
    prune step differently."""
    if not step.removed or not step.representatives:
        return 0.0
    raw = _as_sign_rows(x)
    rows = sorted(set(step.removed) | set(step.representatives))
    pos = {r: i for i, r in enumerate(rows)}
    qm = QueryMatrix(raw[rows])
    s = sample_coeff_vector(qm, pair.yes_rv, as_generator(rng), size=samples)
    sg = s >= -1e-12 * _sign_scale(qm, pair.yes_rv)
    a = [pos[i] for i in step.removed]
    b = [pos[i] for i in step.representatives]
    return float(np.mean(np.any(sg[:, a] != sg[:, b], axis=1)))


def near_span_set(n: int, size: int, k: int = 2, flips: int = 1, rng=None) -> np.ndarray:
    """Degenerate query set: ``k`` base points plus copies of ``+-base`` with
    ``flips`` random coordinates flipped (distinct rows, at most ``size``)."""
    rng = as_generator(rng)
    base = rng.choice(np.array([-1, 1], dtype=np.int8), (k, n))
    rows = {r.tobytes(): r for r in base}
    attempts = 0
    while len(rows) < size and attempts < 100 * size:
        attempts += 1
        v = base[rng.integers(k)] * rng.choice(np.array([-1, 1], dtype=np.int8))
        v = v.copy()
        v[rng.choice(n, flips, replace=False)] *= -1
        rows.setdefault(v.tobytes(), v)
    return np.array(list(rows.values()), dtype=np.int8)
