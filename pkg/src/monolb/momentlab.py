"""Moment problems behind the yes/no coefficient distributions.

The yes variable ``u`` is the Gauss quadrature rule of ``N(mu, 1)`` with
``(ell + 1) / 2`` nodes; it matches the first ``ell`` raw moments and is
nonnegative once ``mu`` clears the largest node offset.  The no variable
``v`` matches the same moments while carrying the Gaussian's negative mass
on negative atoms; it is found as a vertex of a moment LP over a candidate
grid and polished in extended precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath
import numpy as np
from numpy.polynomial import hermite_e
from scipy import integrate, optimize, stats

from ._validation import check_odd, check_positive_int

MAX_ELL = 15
PSD_RTOL = 1e-10


class MomentProblemError(RuntimeError):
    """A moment construction failed (infeasible grid, negative node, breakdown)."""


# ---------------------------------------------------------------------------
# Gaussian moments and Hankel matrices
# ---------------------------------------------------------------------------


def double_factorial(k: int) -> int:
    """``k!!`` for ``k >= -1`` with the conventions ``(-1)!! = 0!! = 1``."""
    if k < -1:
        raise ValueError(f"double factorial undefined for {k}")
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


@dataclass(frozen=True)
class MomentVector:
    """Raw moments ``m_1..m_K`` of ``N(mu, 1)``.

    ``exact`` holds the same values as Fractions (integers when ``mu`` is an
    integer); ``entries`` is the float view.
    """

    mu: float
    exact: tuple
    entries: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.exact)

    def with_zeroth(self) -> list:
        """Exact moments ``m_0..m_K`` (``m_0 = 1``)."""
        return [Fraction(1)] + list(self.exact)


def gaussian_raw_moments(mu, kmax: int) -> MomentVector:
    """Raw moments ``E[N(mu, 1)^k]`` for ``k = 1..kmax``.

    Uses the binomial expansion ``sum_j C(k, 2j) (2j-1)!! mu^(k-2j)`` in exact
    rational arithmetic (floats are converted exactly), so integer ``mu``
    yields integer moments.
    """
    kmax = check_positive_int(kmax, "kmax")
    m = Fraction(mu)
    exact = []
    for k in range(1, kmax + 1):
        total = Fraction(0)
        for j in range(k // 2 + 1):
            total += math.comb(k, 2 * j) * double_factorial(2 * j - 1) * m ** (k - 2 * j)
        exact.append(total.numerator if total.denominator == 1 else total)
    entries = np.array([float(e) for e in exact])
    return MomentVector(mu=float(mu), exact=tuple(exact), entries=entries)


@dataclass(frozen=True)
class HankelPair:
    """Moment matrix ``A_R`` and shifted moment matrix ``A_R^+`` (0-based
    ``a_r[i][j] = m_{i+j}``, ``a_r_plus[i][j] = m_{i+j+1}``)."""

    a_r: np.ndarray
    a_r_plus: np.ndarray
    order: int
    exact_a_r: tuple = field(default=(), repr=False)
    exact_a_r_plus: tuple = field(default=(), repr=False)


def hankel_matrices(m: MomentVector) -> HankelPair:
    """Build the Hankel pair from an odd-order moment vector ``ell = 2n + 1``."""
    order = m.K
    if order % 2 == 0:
        raise ValueError(f"Hankel pair needs an odd moment order, got {order}")
    size = (order - 1) // 2 + 1
    mom = m.with_zeroth()
    ex = tuple(tuple(mom[i + j] for j in range(size)) for i in range(size))
    ex_plus = tuple(tuple(mom[i + j + 1] for j in range(size)) for i in range(size))
    a = np.array([[float(v) for v in row] for row in ex])
    a_plus = np.array([[float(v) for v in row] for row in ex_plus])
    return HankelPair(a_r=a, a_r_plus=a_plus, order=order, exact_a_r=ex, exact_a_r_plus=ex_plus)


@dataclass(frozen=True)
class PSDReport:
    min_eig_a_r: float
    min_eig_a_r_plus: float
    real_line_feasible: bool
    nonneg_feasible: bool


def _psd_ok(mat: np.ndarray, rtol: float) -> tuple[float, bool]:
    eig = np.linalg.eigvalsh(mat)
    smax = float(np.max(np.abs(eig)))
    lam = float(eig[0])
    return lam, lam >= -rtol * max(smax, np.finfo(float).tiny)


def psd_feasibility(h: HankelPair, rtol: float = PSD_RTOL) -> PSDReport:
    """Check the Hamburger (real line) and Stieltjes (half line) conditions.

    A matrix counts as PSD when ``lambda_min >= -rtol * sigma_max``.
    """
    lam, ok = _psd_ok(h.a_r, rtol)
    lam_p, ok_p = _psd_ok(h.a_r_plus, rtol)
    return PSDReport(
        min_eig_a_r=lam,
        min_eig_a_r_plus=lam_p,
        real_line_feasible=ok,
        nonneg_feasible=ok and ok_p,
    )


# ---------------------------------------------------------------------------
# Discrete random variables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteRV:
    """Finite-support real random variable."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        probs = np.asarray(self.probs, dtype=float).ravel()
        if atoms.shape != probs.shape or atoms.size == 0:
            raise ValueError("atoms and probs must be non-empty and of equal length")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly increasing")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_unsorted(cls, atoms, probs, drop_below: float = 0.0) -> "DiscreteRV":
        """Sort, merge equal atoms and drop atoms with mass ``<= drop_below``."""
        atoms = np.asarray(atoms, dtype=float)
        probs = np.asarray(probs, dtype=float)
        keep = probs > drop_below
        atoms, probs = atoms[keep], probs[keep]
        uniq, inv = np.unique(atoms, return_inverse=True)
        merged = np.bincount(inv, weights=probs, minlength=uniq.size)
        merged = merged / merged.sum()
        return cls(uniq, merged)

    @property
    def support_size(self) -> int:
        return int(self.atoms.size)

    def moment(self, k: int) -> float:
        return float(np.dot(self.probs, self.atoms**k))

    def moments(self, kmax: int) -> np.ndarray:
        return np.array([self.moment(k) for k in range(1, kmax + 1)])

    def mean(self) -> float:
        return self.moment(1)

    def variance(self) -> float:
        return self.moment(2) - self.mean() ** 2

    def negative_mass(self) -> float:
        return float(self.probs[self.atoms < 0].sum())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.atoms)))

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.atoms, size=size, p=self.probs)

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteRV":
        return cls(np.asarray(data["atoms"], float), np.asarray(data["probs"], float))


def relative_moment_errors(rv: DiscreteRV, target: MomentVector) -> np.ndarray:
    """``|E[rv^k] - m_k| / max(|m_k|, 1)`` for each ``k`` in the target."""
    got = rv.moments(target.K)
    return np.abs(got - target.entries) / np.maximum(np.abs(target.entries), 1.0)


@dataclass(frozen=True)
class YesNoPair:
    ell: int
    mu: int
    yes_rv: DiscreteRV
    no_rv: DiscreteRV

    def moment_residuals(self) -> dict:
        target = gaussian_raw_moments(self.mu, self.ell)
        return {
            "yes": relative_moment_errors(self.yes_rv, target).tolist(),
            "no": relative_moment_errors(self.no_rv, target).tolist(),
        }

    def beta(self) -> float:
        """Largest atom magnitude across both variables."""
        return max(self.yes_rv.max_abs(), self.no_rv.max_abs())

    def to_dict(self) -> dict:
        return {
            "ell": self.ell,
            "mu": self.mu,
            "yes": self.yes_rv.to_dict(),
            "no": self.no_rv.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "YesNoPair":
        return cls(
            ell=int(data["ell"]),
            mu=data["mu"],
            yes_rv=DiscreteRV.from_dict(data["yes"]),
            no_rv=DiscreteRV.from_dict(data["no"]),
        )


# ---------------------------------------------------------------------------
# Yes variable: Gauss quadrature from the moment sequence
# ---------------------------------------------------------------------------


def recurrence_from_moments(moments: Sequence) -> tuple[list, list]:
    """Three-term recurrence coefficients from ``m_0..m_{2r-1}``.

    Classical Chebyshev algorithm run in exact arithmetic on Fractions, so
    the Hankel ill-conditioning never enters.  Returns ``(alpha, beta)`` of
    length ``r`` with ``beta[0] = m_0``.
    """
    mom = [Fraction(x) for x in moments]
    if len(mom) % 2:
        raise ValueError("need an even number of moments m_0..m_{2r-1}")
    r = len(mom) // 2
    if mom[0] <= 0:
        raise MomentProblemError("m_0 must be positive")
    alpha = [mom[1] / mom[0]]
    beta = [mom[0]]
    prev = [Fraction(0)] * (2 * r)
    cur = list(mom)
    for k in range(1, r):
        nxt = [Fraction(0)] * (2 * r)
        for l in range(k, 2 * r - k):
            nxt[l] = cur[l + 1] - alpha[k - 1] * cur[l] - beta[k - 1] * prev[l]
        if nxt[k] <= 0:
            raise MomentProblemError(
                f"recurrence breakdown at degree {k}: moment matrix is singular"
            )
        alpha.append(nxt[k + 1] / nxt[k] - cur[k] / cur[k - 1])
        beta.append(nxt[k] / cur[k - 1])
        prev, cur = cur, nxt
    return alpha, beta


def gauss_rule(alpha: Sequence, beta: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights from the Jacobi matrix (Golub-Welsch)."""
    a = np.array([float(x) for x in alpha])
    b = np.array([float(x) for x in beta])
    jac = np.diag(a)
    if a.size > 1:
        off = np.sqrt(b[1:])
        jac += np.diag(off, 1) + np.diag(off, -1)
    nodes, vecs = np.linalg.eigh(jac)
    weights = b[0] * vecs[0, :] ** 2
    return nodes, weights


def _check_ell(ell) -> int:
    ell = check_odd(ell, "ell")
    if ell > MAX_ELL:
        raise ValueError(
            f"ell={ell} exceeds the supported cap {MAX_ELL}; Hankel conditioning makes "
            "double precision meaningless beyond it"
        )
    return ell


def build_yes_rv(ell: int, mu) -> DiscreteRV:
    """The ``(ell+1)/2``-node Gauss rule of ``N(mu, 1)``.

    Raises
    ------
    MomentProblemError
        If the Hankel pair is not PSD, the recurrence breaks down, or a node
        is negative (``mu`` too small).
    """
    ell = _check_ell(ell)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    target = gaussian_raw_moments(mu, ell)
    report = psd_feasibility(hankel_matrices(target))
    if not report.nonneg_feasible:
        raise MomentProblemError(
            f"moments of N({mu},1) up to order {ell} are not realizable on [0, inf): "
            f"min eigenvalue of A_R^+ is {report.min_eig_a_r_plus:.3e}"
        )
    alpha, beta = recurrence_from_moments(target.with_zeroth())
    nodes, weights = gauss_rule(alpha, beta)
    scale = max(1.0, abs(float(mu)))
    nodes = np.where(np.abs(nodes) <= 1e-12 * scale, 0.0, nodes)
    if np.any(nodes < 0):
        raise MomentProblemError(
            f"quadrature node {nodes.min():.6g} < 0 for ell={ell}, mu={mu}: mu too small"
        )
    return DiscreteRV.from_unsorted(nodes, weights)


def find_mu(ell: int, cap: int | None = None) -> int:
    """Smallest positive integer ``mu`` for which :func:`build_yes_rv` succeeds."""
    ell = _check_ell(ell)
    cap = 10 * ell if cap is None else cap
    failures = []
    for mu in range(1, cap + 1):
        try:
            build_yes_rv(ell, mu)
        except MomentProblemError as exc:
            failures.append(f"mu={mu}: {exc}")
            continue
        return mu
    raise MomentProblemError(
        f"no integer mu <= {cap} works for ell={ell}; last failure: {failures[-1]}"
    )


# ---------------------------------------------------------------------------
# No variable: moment LP on a grid + Caratheodory reduction
# ---------------------------------------------------------------------------


def _constraint_matrix(x: np.ndarray, mu: float, ell: int) -> np.ndarray:
    """Equality rows in the normalized Hermite basis around ``mu``.

    ``E[He_k(X - mu)] = 0`` for ``k = 1..ell`` is a triangular recombination
    of the raw moment conditions, and on a Gaussian-shaped grid these rows
    are far better conditioned than raw powers.
    """
    y = x - mu
    rows = [np.ones_like(x)]
    for k in range(1, ell + 1):
        coef = np.zeros(k + 1)
        coef[k] = 1.0
        rows.append(hermite_e.hermeval(y, coef) / math.sqrt(math.factorial(k)))
    rows.append((x < 0).astype(float))
    return np.vstack(rows)


def caratheodory_reduce(points: np.ndarray, weights: np.ndarray, tol: float = 1e-13):
    """Shrink a nonnegative combination ``points @ weights`` to affinely
    independent support.

    ``points`` is ``(m, s)``; returns the kept column indices and new weights.
    The represented vector is preserved up to floating-point round-off.
    """
    idx = np.flatnonzero(weights > tol)
    w = weights[idx].astype(float)
    while True:
        sub = points[:, idx]
        # null space of the column set
        _, s, vt = np.linalg.svd(sub, full_matrices=True)
        rank = int(np.sum(s > s.max() * 1e-12)) if s.size else 0
        if rank >= idx.size:
            return idx, w
        z = vt[rank]
        if not np.any(z > 0):
            z = -z
        pos = z > 0
        t = np.min(w[pos] / z[pos])
        w = w - t * z
        keep = w > tol * max(1.0, w.max())
        idx, w = idx[keep], w[keep]


def _polish(x: np.ndarray, ell: int, rhs: list, dps: int = 50) -> np.ndarray:
    """Re-solve the moment system on a fixed support in extended precision."""
    with mpmath.workdps(dps):
        cols = []
        for xi in x:
            xm = mpmath.mpf(float(xi))
            col = [mpmath.mpf(1)] + [xm**k for k in range(1, ell + 1)]
            col.append(mpmath.mpf(1) if xi < 0 else mpmath.mpf(0))
            cols.append(col)
        mat = mpmath.matrix(len(rhs), len(x))
        for j, col in enumerate(cols):
            for i, val in enumerate(col):
                mat[i, j] = val
        b = mpmath.matrix([mpmath.mpf(v) if not isinstance(v, Fraction)
                           else mpmath.mpf(v.numerator) / v.denominator for v in rhs])
        if mat.rows == mat.cols:
            sol = mpmath.lu_solve(mat, b)
        else:
            sol, _ = mpmath.qr_solve(mat, b)
        return np.array([float(sol[i]) for i in range(len(x))])


def _candidate_grid(mu: float, grid_size: int, round_: int) -> np.ndarray:
    q = np.arange(1, grid_size + 1) / (grid_size + 1)
    pts = [
        mu + stats.norm.ppf(q),
        np.array([-2.0, -1.0, -0.5]),
        np.arange(-2.0, math.ceil(mu) + 9.0),
    ]
    if round_ > 0:
        tails = np.linspace(2.5, 2.5 + 2 * round_, 4 * round_ + 1)
        pts += [mu + tails, mu - tails, -np.geomspace(0.05, 2.0 + round_, 8 * round_)]
    return np.unique(np.concatenate(pts))


def build_no_rv(ell: int, mu, grid_size: int = 200, max_rounds: int = 4) -> DiscreteRV:
    """Finite-support variable matching ``m_1..m_ell`` of ``N(mu, 1)`` and
    putting exactly ``Pr[N(mu,1) < 0]`` on negative atoms.

    The candidate grid holds Gaussian quantiles, a few fixed negative points
    and the integers in ``[-2, mu + 8]``.  The LP cost favours integer atoms
    and a large negative part; any vertex has at most ``ell + 2`` atoms (one
    per equality constraint).  The support is then
    re-solved in extended precision so the moments match to round-off.
    """
    ell = _check_ell(ell)
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    target = gaussian_raw_moments(mu, ell)
    neg_mass = float(stats.norm.cdf(-float(mu)))
    rhs_exact = [Fraction(1)] + list(target.exact)
    rhs_exact.append(mpmath.ncdf(-mpmath.mpf(float(mu))))
    last = "not attempted"
    for round_ in range(max_rounds):
        grid = _candidate_grid(float(mu), grid_size * 2**round_, round_)
        mat = _constraint_matrix(grid, float(mu), ell)
        rhs = np.zeros(ell + 2)
        rhs[0], rhs[-1] = 1.0, neg_mass
        scale = np.abs(mat).max(axis=1)
        # among feasible vertices prefer integer atoms, then a large negative
        # part: lattice weights make balanced partial sums common, which is
        # what lets a negative weight flip the sign of the LTF
        cost = np.abs(grid - np.round(grid)) + 0.1 * np.minimum(grid, 0.0)
        res = optimize.linprog(
            cost,
            A_eq=mat / scale[:, None],
            b_eq=rhs / scale,
            bounds=(0, None),
            method="highs-ds",
            # the default 1e-7 feasibility tolerance lets HiGHS return a
            # support on which no exact solution exists
            options={"primal_feasibility_tolerance": 1e-10,
                     "dual_feasibility_tolerance": 1e-10},
        )
        if res.status != 0:
            last = res.message
            continue
        idx, w = caratheodory_reduce(mat / scale[:, None], res.x)
        x = grid[idx]
        p = _polish(x, ell, rhs_exact)
        if np.any(p < -1e-14):
            last = f"polished weights went negative ({p.min():.3e})"
            continue
        p = np.clip(p, 0.0, None)
        rv = DiscreteRV.from_unsorted(x, p / p.sum())
        err = relative_moment_errors(rv, target).max()
        if err > 1e-9 or abs(rv.negative_mass() - neg_mass) > 1e-6:
            last = f"polish residual {err:.3e}"
            continue
        return rv
    raise MomentProblemError(
        f"no-variable LP failed for ell={ell}, mu={mu} after {max_rounds} rounds: {last}"
    )


def build_pair(ell: int, mu: int | None = None, grid_size: int = 200) -> YesNoPair:
    """Yes/no variables for ``ell`` at ``mu`` (default: :func:`find_mu`)."""
    ell = _check_ell(ell)
    if mu is None:
        mu = find_mu(ell)
    return YesNoPair(ell=ell, mu=mu, yes_rv=build_yes_rv(ell, mu),
                     no_rv=build_no_rv(ell, mu, grid_size=grid_size))


# ---------------------------------------------------------------------------
# Supporting identities
# ---------------------------------------------------------------------------


def bareiss_det(matrix: Sequence[Sequence[int]]) -> int:
    """Exact determinant of an integer matrix (fraction-free elimination)."""
    a = [list(map(int, row)) for row in matrix]
    n = len(a)
    if any(len(row) != n for row in a):
        raise ValueError("matrix must be square")
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def exact_det(matrix) -> Fraction:
    """Determinant of a rational matrix by clearing denominators."""
    rows = [[Fraction(v) for v in row] for row in matrix]
    lcm = 1
    for row in rows:
        for v in row:
            lcm = lcm * v.denominator // math.gcd(lcm, v.denominator)
    ints = [[int(v * lcm) for v in row] for row in rows]
    return Fraction(bareiss_det(ints), lcm ** len(rows))


def b_matrix(ell: int) -> list[list[int]]:
    """``B^(ell)``: ``r x r`` with ``(i, j)`` entry ``(2(i+j)-3)!!`` (1-based)."""
    ell = check_odd(ell, "ell")
    r = (ell + 1) // 2
    return [[double_factorial(2 * (i + j) - 3) for j in range(1, r + 1)] for i in range(1, r + 1)]


def det_b(ell: int) -> int:
    return bareiss_det(b_matrix(ell))


def odd_factorial_product(ell: int) -> int:
    """``prod_{odd j <= ell} j!``."""
    out = 1
    for j in range(1, ell + 1, 2):
        out *= math.factorial(j)
    return out


def truncation_moment_gap(mu: float, k: int) -> tuple[float, float]:
    """``|E[max(z,0)^k] - E[z^k]|`` for ``z ~ N(mu, 1)`` and its Gaussian-tail bound.

    The gap equals ``int_{-inf}^0 |y|^k phi(y - mu) dy``; substituting
    ``y = -t`` and pulling out ``exp(-mu^2/2)`` keeps the integrand O(1) for
    large ``mu``.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    k = check_positive_int(k, "k")
    tilt = math.exp(-0.5 * mu * mu)

    def integrand(t):
        return t**k * math.exp(-0.5 * t * t - mu * t) / math.sqrt(2 * math.pi)

    val, err = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    if not np.isfinite(val) or err > 1e-8 * max(val, 1e-300) + 1e-300:
        raise ArithmeticError(f"tail integral did not converge (mu={mu}, k={k}, err={err})")
    return tilt * val, tilt * double_factorial(k - 1)


@dataclass(frozen=True)
class SandwichReport:
    ell: int
    mu: int
    det: int
    sigma_max: float
    sigma_bound: int

    @property
    def holds(self) -> bool:
        return abs(self.det) >= 1 and self.sigma_max <= self.sigma_bound


def hankel_sandwich(ell: int, mu: int) -> SandwichReport:
    """Exact determinant and top singular value of the ``(ell+1)``-square
    shifted moment matrix built from ``m_1..m_{2 ell + 1}``."""
    ell = check_odd(ell, "ell")
    mu = check_positive_int(mu, "mu")
    pair = hankel_matrices(gaussian_raw_moments(mu, 2 * ell + 1))
    det = bareiss_det(pair.exact_a_r_plus)
    smax = float(np.linalg.svd(pair.a_r_plus, compute_uv=False)[0])
    bound = (ell + 1) ** 2 * math.factorial(2 * ell + 1) * mu ** (2 * ell + 1)
    return SandwichReport(ell=ell, mu=mu, det=det, sigma_max=smax, sigma_bound=bound)
