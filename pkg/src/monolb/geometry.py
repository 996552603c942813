"""Cube points against low-dimensional subspaces.

Points of ``{+-1/sqrt(n)}^n`` are stored by their sign rows (int8) and
scaled on demand.  The toolkit covers distances to spans, the finite set
of cube roundings of a span (via the central hyperplane arrangement of the
column points), low-weight representations, and the compatibility test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog, minimize

from ._validation import as_generator, check_positive_int, signs_of
from .momentlab import DiscreteRV, YesNoPair

DIST_ZERO_TOL = 1e-12
ROUND_TOL = 1e-12


class GeometryError(RuntimeError):
    """Numerical failure in a geometric construction."""


class ArrangementTooLarge(ValueError):
    """The face enumeration exceeded its size guard."""


# ---------------------------------------------------------------------------
# Point sets
# ---------------------------------------------------------------------------


def as_signs(v) -> np.ndarray:
    """Sign rows of cube points given either as ``+-1`` or as ``+-1/sqrt(n)`` entries."""
    arr = np.asarray(v, dtype=float)
    n = arr.shape[-1]
    mag = np.abs(arr)
    if np.all(mag == 1):
        return np.sign(arr).astype(np.int8)
    if np.allclose(mag * math.sqrt(n), 1.0, rtol=0, atol=1e-12):
        return np.sign(arr).astype(np.int8)
    raise ValueError("expected cube points with entries +-1 or +-1/sqrt(n)")


@dataclass(frozen=True)
class CubePointSet:
    """Distinct points of ``{+-1/sqrt(n)}^n``, stored as sign rows."""

    n: int
    signs: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.signs))
        if s.size == 0:
            s = s.reshape(0, self.n)
        if s.shape[1] != self.n:
            raise ValueError(f"points have length {s.shape[1]}, expected n={self.n}")
        if s.size and not np.all(np.isin(s, (-1, 1))):
            raise ValueError("cube points must have +-1 sign entries")
        s = s.astype(np.int8)
        if np.unique(s, axis=0).shape[0] != s.shape[0]:
            raise ValueError("cube points must be distinct")
        object.__setattr__(self, "signs", s)

    @classmethod
    def from_points(cls, points) -> "CubePointSet":
        s = as_signs(np.atleast_2d(points))
        return cls(s.shape[1], s)

    @property
    def k(self) -> int:
        return int(self.signs.shape[0])

    def __len__(self) -> int:
        return self.k

    @property
    def points(self) -> np.ndarray:
        return self.signs / math.sqrt(self.n)

    def subset(self, idx) -> "CubePointSet":
        return CubePointSet(self.n, self.signs[np.asarray(idx, dtype=int)])

    def to_dict(self) -> dict:
        return {"n": self.n, "rows": self.signs.astype(int).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "CubePointSet":
        return cls(int(data["n"]), np.asarray(data["rows"], dtype=np.int8).reshape(-1, int(data["n"])))


def dedup_rows(signs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows in first-occurrence order, and their original indices."""
    _, first = np.unique(np.asarray(signs), axis=0, return_index=True)
    keep = np.sort(first)
    return np.asarray(signs)[keep], keep


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def _orthonormal_basis(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the row space of ``a``."""
    u, s, _ = np.linalg.svd(a.T, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return u[:, :0]
    rank = int(np.sum(s > s[0] * max(a.shape) * np.finfo(float).eps))
    return u[:, :rank]


def span_residuals(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Residual vectors of the rows of ``w`` after projection onto ``span(rows of a)``."""
    q = _orthonormal_basis(np.atleast_2d(a))
    w = np.atleast_2d(w)
    return w - (w @ q) @ q.T


def dist_to_span(v, a: CubePointSet) -> float:
    """Euclidean distance from a cube point to ``span(a)``."""
    if a.k == 0:
        raise ValueError("a must be nonempty")
    v = as_signs(v) / math.sqrt(a.n)
    r = float(np.linalg.norm(span_residuals(v, a.points)))
    return 0.0 if r < DIST_ZERO_TOL else r


def span_dist_sq_exact(w_signs: np.ndarray, a_signs: np.ndarray) -> np.ndarray:
    """Squared distances of cube points to ``span(a)`` from integer Gram determinants.

    For independent ``a``, ``dist^2(W) = det G(a, W) / (n * det G(a))`` with
    ``G`` the integer Gram matrix of sign rows.  Both determinants are
    integers well below ``2^53`` for ``n <= 4096, k <= 4``, so they are
    rounded to exact values.  Dependent ``a`` is reduced to a basis first.
    """
    a = np.atleast_2d(np.asarray(a_signs, dtype=np.int64))
    w = np.atleast_2d(np.asarray(w_signs, dtype=np.int64))
    n = a.shape[1]
    basis = _independent_rows(a)
    a = a[basis]
    ga = a @ a.T
    det_a = float(np.rint(np.linalg.det(ga.astype(float))))
    g = w @ a.T  # (m, k)
    k = a.shape[0]
    border = np.empty((w.shape[0], k + 1, k + 1))
    border[:, :k, :k] = ga
    border[:, :k, k] = g
    border[:, k, :k] = g
    border[:, k, k] = n
    num = np.rint(np.linalg.det(border))
    return num / (n * det_a)


def _independent_rows(a: np.ndarray) -> list[int]:
    keep: list[int] = []
    for i in range(a.shape[0]):
        trial = a[keep + [i]].astype(float)
        if np.linalg.matrix_rank(trial) == len(keep) + 1:
            keep.append(i)
    return keep


def cube_points_near_span(x: CubePointSet, a: CubePointSet, r: float) -> tuple[CubePointSet, np.ndarray]:
    """Points of ``x`` within distance ``r`` of ``span(a)``, with their indices."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    d2 = span_dist_sq_exact(x.signs, a.signs)
    idx = np.flatnonzero(d2 <= r * r * (1 + 1e-12))
    return x.subset(idx), idx


def count_cube_points_in_span(a: CubePointSet, chunk: int = 1 << 16) -> int:
    """Exhaustive count of ``{+-1/sqrt(n)}^n`` points lying in ``span(a)`` (n <= 22)."""
    n = a.n
    if n > 22:
        raise ValueError("exhaustive cube scan is limited to n <= 22")
    total = 0
    for lo in range(0, 1 << n, chunk):
        idx = np.arange(lo, min(1 << n, lo + chunk), dtype=np.int64)
        pts = np.where((idx[:, None] >> np.arange(n)) & 1, 1, -1).astype(np.int8)
        total += int(np.count_nonzero(span_dist_sq_exact(pts, a.signs) == 0))
    return total


def round_to_cube(u) -> np.ndarray:
    """Sign rows of ``sign(u)`` with ``sign(0) = +1`` (ties judged relative to ``max |u|``)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    scale = np.maximum(np.max(np.abs(u), axis=1, keepdims=True), 1e-300)
    return signs_of(u, scale)


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.count_nonzero(np.asarray(a) != np.asarray(b), axis=-1)


# ---------------------------------------------------------------------------
# Central hyperplane arrangements
# ---------------------------------------------------------------------------


def _face_feasible(normals: np.ndarray, signs: tuple) -> np.ndarray | None:
    """A point ``alpha`` with ``sign(normals @ alpha) = signs`` (margin 1), or None."""
    k = normals.shape[1]
    s = np.asarray(signs)
    strict = s != 0
    a_ub = -(s[strict, None] * normals[strict]) if np.any(strict) else None
    b_ub = -np.ones(int(strict.sum())) if np.any(strict) else None
    a_eq = normals[~strict] if np.any(~strict) else None
    b_eq = np.zeros(int((~strict).sum())) if np.any(~strict) else None
    res = linprog(np.zeros(k), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * k, method="highs")
    if res.status == 0:
        return res.x
    if res.status == 2:
        return None
    raise GeometryError(f"face LP failed: {res.message}")


def arrangement_faces(normals, strict_only: bool = False, max_faces: int | None = None):
    """Faces of the central arrangement ``{alpha : h . alpha = 0}``.

    Hyperplanes are inserted one at a time; each face of the current
    arrangement is extended by ``-``, ``0`` and ``+`` on the new hyperplane
    and kept when an LP finds a witness.  With ``strict_only`` only the
    full-dimensional cells are traversed.  Returns ``(signs, witnesses)``.
    """
    h = np.atleast_2d(np.asarray(normals, dtype=float))
    m, k = h.shape
    choices = (-1, 1) if strict_only else (-1, 0, 1)
    faces: list[tuple] = [()]
    wits: list[np.ndarray] = [np.zeros(k)]
    for t in range(m):
        nf, nw = [], []
        for f, w in zip(faces, wits):
            val = float(h[t] @ w)
            for s in choices:
                sig = f + (s,)
                # the parent's witness often already realizes one extension
                if (s == 0 and abs(val) < 1e-12) or (s != 0 and s * val >= 1):
                    nf.append(sig)
                    nw.append(w)
                    continue
                alpha = _face_feasible(h[: t + 1], sig)
                if alpha is not None:
                    nf.append(sig)
                    nw.append(alpha)
        faces, wits = nf, nw
        if max_faces is not None and len(faces) > max_faces:
            raise ArrangementTooLarge(f"arrangement has more than {max_faces} faces")
    return np.array(faces, dtype=np.int8).reshape(len(faces), m), np.array(wits).reshape(len(faces), k)


def region_count_formula(n: int, k: int) -> int:
    """Cells of a central arrangement of ``n`` hyperplanes in general position in ``R^k``."""
    return 2 * sum(math.comb(n - 1, i) for i in range(k))


def sample_sign_patterns(normals, samples: int, rng=None) -> set:
    """Sign patterns of ``normals @ alpha`` for Gaussian ``alpha`` (ties have probability 0)."""
    h = np.atleast_2d(np.asarray(normals, dtype=float))
    rng = as_generator(rng)
    out: set = set()
    for lo in range(0, samples, 1 << 15):
        m = min(1 << 15, samples - lo)
        alpha = rng.standard_normal((m, h.shape[1]))
        out.update(map(tuple, np.where(alpha @ h.T >= 0, 1, -1).tolist()))
    return out


def real_point_cells(points) -> np.ndarray:
    """Sign patterns of homogeneous separators on arbitrary real points (cells only).

    Test hook for the general-position count; ``points`` is ``(n, k)``.
    """
    signs, _ = arrangement_faces(points, strict_only=True)
    return signs


# ---------------------------------------------------------------------------
# Cover sets
# ---------------------------------------------------------------------------


def _column_types(a_signs: np.ndarray):
    """Canonical hyperplane normals of the column points (first entry +1),
    each column's normal index and orientation."""
    cols = a_signs.T.astype(np.int8)
    orient = cols[:, 0].copy()
    canon = cols * orient[:, None]
    normals, inv = np.unique(canon, axis=0, return_inverse=True)
    return normals, inv.ravel(), orient


@lru_cache(maxsize=4096)
def _faces_cached(normals_key: bytes, m: int, k: int, max_faces: int):
    normals = np.frombuffer(normals_key, dtype=np.int8).reshape(m, k)
    return arrangement_faces(normals, max_faces=max_faces)


@dataclass(frozen=True)
class CoverResult:
    """Roundings of ``span(a)``: distinct sign rows and one coefficient witness each."""

    cover: CubePointSet
    witnesses: np.ndarray


def cover_set_with_witnesses(a: CubePointSet, max_faces: int | None = None) -> CoverResult:
    """Every ``U_round`` with ``U`` in ``span(a)`` (``sign(0) = +1``), exactly.

    ``U_i = alpha . P_i`` for the column point ``P_i`` of ``a``, so the
    roundings are the sign patterns of homogeneous separators on the
    columns.  Columns that agree up to sign share a hyperplane; the
    faces of that central arrangement are enumerated with LPs.
    """
    if a.k == 0:
        raise ValueError("a must be nonempty")
    normals, inv, orient = _column_types(a.signs)
    m, k = normals.shape
    cap = max_faces if max_faces is not None else max(a.n ** a.k, 3**k)
    faces, wits = _faces_cached(normals.tobytes(), m, k, int(cap))
    # column i takes orient_i * face sign on its hyperplane, zeros round to +1
    fs = faces[:, inv]
    patterns = np.where(fs == 0, 1, fs * orient[None, :]).astype(np.int8)
    uniq, first = np.unique(patterns, axis=0, return_index=True)
    order = np.sort(first)
    return CoverResult(CubePointSet(a.n, patterns[order]), wits[order])


def cover_set(a: CubePointSet, max_faces: int | None = None) -> CubePointSet:
    """The cover set of ``span(a)`` (see :func:`cover_set_with_witnesses`)."""
    return cover_set_with_witnesses(a, max_faces).cover


def covering_check(x: CubePointSet, a: CubePointSet, r: float) -> float:
    """Largest ``d_Ham(W, cover) / (r^2 n)`` over ``W`` in ``x`` within ``r`` of ``span(a)``
    (the covering claim holds when this is at most 1; 0 when nothing is near)."""
    near, _ = cube_points_near_span(x, a, r)
    if near.k == 0:
        return 0.0
    cov = cover_set(a).signs
    dmin = np.array([hamming(cov, w).min() for w in near.signs])
    if r == 0:
        return 0.0 if np.all(dmin == 0) else math.inf
    return float(dmin.max() / (r * r * a.n))


# ---------------------------------------------------------------------------
# Low-weight representations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LowWeightRep:
    u: np.ndarray
    betas: np.ndarray
    realized_gamma1: float
    realized_gamma2_ratio: float
    case: int
    projection_betas: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "betas": self.betas.tolist(),
            "realized_gamma1": self.realized_gamma1,
            "realized_gamma2_ratio": self.realized_gamma2_ratio,
            "case": self.case,
        }


def hadamard_like(k: int) -> np.ndarray:
    """Deterministic auxiliary sign vectors of length ``k``: Sylvester
    Hadamard rows (truncated) followed by all remaining sign vectors."""
    size = 1
    hm = np.ones((1, 1), dtype=np.int8)
    while size < k:
        hm = np.block([[hm, hm], [hm, -hm]])
        size *= 2
    rows = [tuple(r[:k]) for r in hm]
    seen = set(rows)
    for bits in range(1 << k):
        r = tuple(1 if (bits >> j) & 1 else -1 for j in range(k))
        if r not in seen:
            rows.append(r)
            seen.add(r)
    return np.array(rows, dtype=np.int8)


def _type_columns(a: CubePointSet) -> tuple[np.ndarray, np.ndarray]:
    cols, first = np.unique(a.signs.T, axis=0, return_index=True)
    return cols.astype(float) / math.sqrt(a.n), first


def _augmented_system(types: np.ndarray, in_i: np.ndarray, n: int, cond_limit: float):
    """``None`` when the columns in ``I`` span ``R^k`` (case 1); otherwise the
    square matrix ``[P; T]`` and the chosen rows ``P`` (case 2)."""
    k = types.shape[1]
    chosen = _independent_rows(types[in_i]) if np.any(in_i) else []
    if len(chosen) == k:
        return None
    p = types[in_i][chosen]
    rows = list(p)
    for t in hadamard_like(k):
        if len(rows) == k:
            break
        trial = np.array(rows + [t / math.sqrt(n)])
        if np.linalg.matrix_rank(trial) == len(rows) + 1:
            rows.append(t / math.sqrt(n))
    mat = np.array(rows)
    if len(rows) < k or np.linalg.cond(mat) > cond_limit:
        raise GeometryError("augmented system is numerically singular")
    return mat, p


def _augmented_rhs(p: np.ndarray, beta: np.ndarray, k: int) -> np.ndarray:
    """Right-hand side ``(P . beta, 0)``; ``beta`` may hold one column per point."""
    head = p @ beta
    tail = np.zeros((k - p.shape[0],) + head.shape[1:])
    return np.concatenate([head, tail])


def low_weight_gamma1(w_rows, a: CubePointSet, cond_limit: float = 1e12) -> np.ndarray:
    """Realized ``max |alpha_i|`` of :func:`low_weight_rep` for many points at once.

    Points sharing the same set ``I`` share the augmented system, so each
    distinct ``I`` is factored once.
    """
    n = a.n
    vp = np.atleast_2d(as_signs(w_rows)).astype(float) / math.sqrt(n)
    beta, *_ = np.linalg.lstsq(a.points.T, vp.T, rcond=None)  # (k, m)
    types, first = _type_columns(a)
    u_type = (beta.T @ a.points)[:, first]
    masks = np.abs(u_type) <= 2 / math.sqrt(n) + 1e-12
    out = np.max(np.abs(beta), axis=0)
    uniq, inv = np.unique(masks, axis=0, return_inverse=True)
    for g, mask in enumerate(uniq):
        system = _augmented_system(types, mask, n, cond_limit)
        if system is None:
            continue
        mat, p = system
        sel = np.flatnonzero(inv.ravel() == g)
        coef = np.linalg.solve(mat, _augmented_rhs(p, beta[:, sel], a.k))
        out[sel] = np.max(np.abs(coef), axis=0)
    return out


def low_weight_rep(v, a: CubePointSet, cond_limit: float = 1e12) -> LowWeightRep:
    """Bounded-coefficient representative of ``v`` in ``span(a)``.

    Follows the two-case construction: ``U`` is the least-squares
    projection with coefficients ``beta``; ``I`` collects the column types
    where ``|U_a| <= 2/sqrt(n)``.  If those columns span ``R^k`` the
    projection coefficients are returned.  Otherwise ``j`` independent
    columns from ``I`` are completed to a basis by auxiliary sign vectors
    ``T`` (Hadamard-like, greedy) and the system ``P . x = P . beta``,
    ``T . x = 0`` gives bounded coefficients ``alpha``.
    """
    n = a.n
    vs = as_signs(v)
    vp = vs / math.sqrt(n)
    amat = a.points  # (k, n)
    beta, *_ = np.linalg.lstsq(amat.T, vp, rcond=None)
    u = beta @ amat
    dist = float(np.linalg.norm(vp - u))
    types, first = _type_columns(a)
    system = _augmented_system(types, np.abs(u[first]) <= 2 / math.sqrt(n) + 1e-12, n, cond_limit)
    if system is None:
        coef, case = beta, 1
    else:
        mat, p = system
        coef, case = np.linalg.solve(mat, _augmented_rhs(p, beta, a.k)), 2
    w = coef @ amat
    err = float(np.linalg.norm(vp - w))
    if dist < DIST_ZERO_TOL:
        ratio = 1.0
        if err > 1e-9:
            raise GeometryError("representative misses a point of the span")
    else:
        ratio = err / dist
    return LowWeightRep(u=w, betas=coef, realized_gamma1=float(np.max(np.abs(coef))),
                        realized_gamma2_ratio=ratio, case=case, projection_betas=beta)


# ---------------------------------------------------------------------------
# Compatibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompatibilityVerdict:
    compatible: bool
    witness_betas: np.ndarray | None
    margin: float
    gamma1: float
    log_n: float
    eps: float

    def to_dict(self) -> dict:
        return {
            "compatible": self.compatible,
            "witness_betas": None if self.witness_betas is None else self.witness_betas.tolist(),
            "margin": self.margin,
        }


def compatibility_gap(v, a: CubePointSet, beta, eps: float, log_n: float | None = None) -> float:
    """``|sum(V - U)| - (||V - U|| + eps) log n`` at ``U = beta . a`` (direct evaluation)."""
    log_n = math.log(a.n) if log_n is None else log_n
    vp = as_signs(v) / math.sqrt(a.n)
    diff = vp - np.asarray(beta, dtype=float) @ a.points
    return float(abs(diff.sum()) - (np.linalg.norm(diff) + eps) * log_n)


class ConvergenceError(RuntimeError):
    """The box-constrained maximization did not converge."""


def compatibility(v, a: CubePointSet, eps: float, gamma1: float,
                  log_n: float | None = None) -> CompatibilityVerdict:
    """Decide whether some ``beta`` in ``[-gamma1, gamma1]^k`` makes
    ``|sum(V - U)| > (||V - U|| + eps) log n``.

    With ``c = A 1`` and ``G = A A^T`` both sides are functions of
    ``beta`` in ``R^k``: ``sum(V - U) = sum(V) - c . beta`` and
    ``||V - U||^2 = 1 - 2 (A V) . beta + beta^T G beta``.  For each sign
    ``s`` the map ``s sum(V - U) - log n ||V - U||`` is concave, so it is
    maximized over the box by L-BFGS-B from several starts; the
    non-smooth point where ``U = V`` is evaluated separately.
    """
    if not gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    if not eps >= 0:
        raise ValueError("eps must be nonnegative")
    log_n = math.log(a.n) if log_n is None else log_n
    amat = a.points
    vp = as_signs(v) / math.sqrt(a.n)
    c = amat.sum(axis=1)
    sv = float(vp.sum())
    g = amat @ amat.T
    av = amat @ vp
    k = a.k
    bounds = [(-gamma1, gamma1)] * k

    def norm(beta):
        return math.sqrt(max(1.0 - 2.0 * av @ beta + beta @ g @ beta, 0.0))

    def objective(beta, s):
        return s * (sv - c @ beta) - log_n * norm(beta)

    best_val, best_beta = -math.inf, None
    starts = [np.zeros(k)]
    proj, *_ = np.linalg.lstsq(amat.T, vp, rcond=None)
    starts.append(np.clip(proj, -gamma1, gamma1))
    for s in (-1.0, 1.0):
        starts.append(np.clip(-s * gamma1 * np.sign(c), -gamma1, gamma1))

        def f(beta, s=s):
            nb = norm(beta)
            grad_n = (g @ beta - av) / nb if nb > 1e-15 else np.zeros(k)
            return -objective(beta, s), -(-s * c - log_n * grad_n)

        for x0 in starts:
            res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
            val = objective(res.x, s)
            if val > best_val:
                best_val, best_beta = val, res.x
            if not res.success and "ABNORMAL" not in str(res.message):
                raise ConvergenceError(f"compatibility optimizer failed: {res.message}")
        if np.all(np.abs(proj) <= gamma1) and norm(proj) < 1e-9:
            val = objective(proj, s)
            if val > best_val:
                best_val, best_beta = val, proj
    margin = best_val - eps * log_n
    incompatible = margin > 0
    if incompatible:
        check = compatibility_gap(vp, a, best_beta, eps, log_n)
        if not check > 0:
            raise ConvergenceError("incompatibility witness failed re-verification")
    return CompatibilityVerdict(
        compatible=not incompatible,
        witness_betas=np.asarray(best_beta) if incompatible else None,
        margin=float(margin), gamma1=float(gamma1), log_n=float(log_n), eps=float(eps),
    )


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeValue:
    value: float
    stderr: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def incompatibility_box_probe(a: CubePointSet, v, pair: YesNoPair, eps: float, samples: int,
                              rng=None, gamma1: float = 1.0, half_width: float | None = None,
                              which: str = "yes", log_n: float | None = None) -> ProbeValue:
    """``Pr[(A, V) . w in [-2 eps, 2 eps]^(k+1)]`` for i.i.d. coefficients ``w``.

    Requires ``v`` to be incompatible with ``a`` at the given ``gamma1``.
    """
    from .instances import QueryMatrix, sample_coeff_vector

    if compatibility(v, a, eps, gamma1, log_n).compatible:
        raise ValueError("v is compatible with a; the probe needs an incompatible pair")
    rv = {"yes": pair.yes_rv, "no": pair.no_rv}[which]
    stacked = QueryMatrix(np.vstack([a.signs, as_signs(v)[None, :]]))
    w = 2 * eps if half_width is None else half_width
    z = sample_coeff_vector(stacked, rv, as_generator(rng), size=samples)
    hit = np.all(np.abs(z) <= w, axis=1).astype(float)
    return ProbeValue(float(hit.mean()), float(hit.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0, samples)


@dataclass(frozen=True)
class ConcentrationReport:
    probability: float
    stderr: float
    threshold: float
    hoeffding_ceiling: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def concentration_probe(w, rv: DiscreteRV, samples: int, rng=None, chunk: int = 1 << 22) -> ConcentrationReport:
    """``Pr[|sum w_i x_i - mu sum w_i| >= ||w|| (log n)^(3/4)]`` for i.i.d. ``x_i ~ rv``.

    The ceiling is Hoeffding's ``2 exp(-2 t^2 / (||w||^2 R^2))`` with ``R``
    the range of the atoms.  ``w = 0`` reports probability 0.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    samples = check_positive_int(samples, "samples", minimum=2)
    norm = float(np.linalg.norm(w))
    t = norm * math.log(n) ** 0.75 if n > 1 else 0.0
    spread = float(rv.atoms[-1] - rv.atoms[0])
    ceiling = 1.0 if spread == 0 or norm == 0 else min(1.0, 2 * math.exp(-2 * (t / norm) ** 2 / spread**2))
    if norm == 0:
        return ConcentrationReport(0.0, 0.0, 0.0, 0.0, samples)
    rng = as_generator(rng)
    mean = rv.mean() * w.sum()
    hits = 0
    rows = max(1, chunk // n)
    for lo in range(0, samples, rows):
        m = min(rows, samples - lo)
        x = rv.sample((m, n), rng) @ w
        hits += int(np.count_nonzero(np.abs(x - mean) >= t))
    p = hits / samples
    return ConcentrationReport(p, math.sqrt(p * (1 - p) / samples), t, ceiling, samples)


@dataclass(frozen=True)
class GramReport:
    det: float
    residual_product: float
    residuals: np.ndarray

    @property
    def relative_error(self) -> float:
        return abs(self.det - self.residual_product) / max(abs(self.det), 1e-300)

    def holds(self, rtol: float = 1e-8) -> bool:
        return self.relative_error <= rtol


def gram_det_check(rows) -> GramReport:
    """``det(A A^T)`` against the product of squared sequential Gram-Schmidt residuals."""
    a = np.atleast_2d(np.asarray(rows, dtype=float))
    basis: list[np.ndarray] = []
    res = []
    for row in a:
        r = row.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in basis:
                r -= (q @ r) * q
        nr = float(np.linalg.norm(r))
        if nr <= 1e-12 * max(1.0, float(np.linalg.norm(row))):
            raise ValueError("rows are linearly dependent")
        basis.append(r / nr)
        res.append(nr)
    res = np.array(res)
    sign, logdet = np.linalg.slogdet(a @ a.T)
    return GramReport(det=float(sign * math.exp(logdet)), residual_product=float(np.prod(res**2)), residuals=res)
