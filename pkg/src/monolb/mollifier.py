"""Smooth approximations of orthant and box indicators.

The one-dimensional mollifier is ``Phi_eps(x) = B((2x - eps) / eps)`` where
``B`` is the CDF of the bump ``b(t) = c * exp(-1 / (1 - t^2))`` on
``(-1, 1)``.  It is exactly 0 for ``x <= 0`` and exactly 1 for ``x >= eps``.
Two evaluators are provided: a Gauss-Legendre quadrature of the bump
(accurate to round-off, used for derivative checks) and a monotone cubic
table (fast, used inside Monte Carlo loops).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._validation import as_generator, check_positive_int, signs_of

# integral of exp(-1 / (1 - t^2)) over (-1, 1)
BUMP_INTEGRAL = 0.4439938161680793
BUMP_C = 1.0 / BUMP_INTEGRAL

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(80)


def bump_eval(x) -> np.ndarray:
    """``c * exp(-1 / (1 - x^2))`` on ``(-1, 1)``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    xi = x[inside]
    out[inside] = BUMP_C * np.exp(-1.0 / (1.0 - xi * xi))
    return out


def bump_cdf(t) -> np.ndarray:
    """``B(t) = int_{-1}^t b``, via ``1/2 + int_0^t b`` with an 80-point
    Gauss-Legendre rule (the integrand is smooth and flat at the ends)."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    half = 0.5 * t[..., None]
    vals = bump_eval(half * (1.0 + _GL_NODES))
    return 0.5 + half[..., 0] * (vals @ _GL_WEIGHTS)


def phi_eps(x, eps: float) -> np.ndarray:
    """Accurate ``Phi_eps``; exact 0 for ``x <= 0`` and exact 1 for ``x >= eps``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= eps, 1.0, 0.0)
    mid = (x > 0) & (x < eps)
    if np.any(mid):
        out[mid] = bump_cdf((2.0 * x[mid] - eps) / eps)
    return out


def phi_eps_prime(x, eps: float) -> np.ndarray:
    """Closed-form first derivative ``(2 / eps) * b((2x - eps) / eps)``."""
    return (2.0 / eps) * bump_eval((2.0 * np.asarray(x, float) - eps) / eps)


@lru_cache(maxsize=32)
def _cdf_table(size: int) -> PchipInterpolator:
    t = np.linspace(-1.0, 1.0, size)
    vals = np.clip(np.maximum.accumulate(bump_cdf(t)), 0.0, 1.0)
    vals[0], vals[-1] = 0.0, 1.0
    return PchipInterpolator(t, vals)


@dataclass(frozen=True)
class Mollifier1D:
    """Tabulated ``Phi_eps`` (``table_size`` nodes, monotone cubic)."""

    eps: float
    table_size: int = 10_000

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        check_positive_int(self.table_size, "table_size", minimum=16)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.where(x >= self.eps, 1.0, 0.0)
        mid = (x > 0) & (x < self.eps)
        if np.any(mid):
            out[mid] = np.clip(_cdf_table(self.table_size)((2.0 * x[mid] - self.eps) / self.eps), 0, 1)
        return out


def alpha(k: int) -> float:
    """``2e * 64^k * k! * k^(2k+2)``."""
    k = check_positive_int(k, "k")
    exact = 2 * 64**k * math.factorial(k) * k ** (2 * k + 2)
    try:
        return math.e * float(exact)
    except OverflowError as exc:
        raise OverflowError(f"alpha({k}) exceeds double range") from exc


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

# central stencils for derivatives 1..4 (offsets -2..2), second order
_STENCILS = {
    1: np.array([0.0, -0.5, 0.0, 0.5, 0.0]),
    2: np.array([0.0, 1.0, -2.0, 1.0, 0.0]),
    3: np.array([-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


def richardson_derivative(f, x, k: int, h: float, levels: int = 4) -> np.ndarray:
    """``k``-th derivative of a vectorized ``f`` by central differences with
    ``levels``-term Richardson extrapolation (steps ``h, h/2, ...``)."""
    if k not in _STENCILS:
        raise ValueError("finite differences are only implemented for 1 <= k <= 4")
    x = np.asarray(x, dtype=float)
    offs = np.arange(-2, 3)
    table = []
    for lvl in range(levels):
        step = h / 2**lvl
        if step < 1e-12 * max(1.0, float(np.max(np.abs(x)))):
            raise ArithmeticError("finite-difference step underflow")
        vals = sum(c * f(x + o * step) for c, o in zip(_STENCILS[k], offs) if c != 0)
        table.append(vals / step**k)
    # the central stencils have even error expansions in the step
    for m in range(1, levels):
        fac = 4.0**m
        table = [(fac * table[j + 1] - table[j]) / (fac - 1) for j in range(len(table) - 1)]
    return table[0]


@dataclass(frozen=True)
class DerivativeReport:
    eps: float
    k: int
    max_abs: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.max_abs <= self.bound

    def to_dict(self) -> dict:
        return {"eps": self.eps, "k": self.k, "max_abs": self.max_abs,
                "bound": self.bound, "holds": self.holds}


def derivative_bound_check(eps: float, k: int, grid_size: int = 2001) -> DerivativeReport:
    """Max of ``|Phi_eps^(k)|`` over a dense grid of ``[0, eps]`` against ``alpha(k) / eps^k``."""
    if not 1 <= k <= 4:
        raise ValueError("k must lie in 1..4 (finite-difference accuracy guard)")
    grid = np.linspace(0.0, eps, grid_size)
    d = richardson_derivative(lambda x: phi_eps(x, eps), grid, k, h=eps / 64)
    return DerivativeReport(eps=eps, k=k, max_abs=float(np.max(np.abs(d))), bound=alpha(k) / eps**k)


# ---------------------------------------------------------------------------
# Orthant mollifier
# ---------------------------------------------------------------------------


def orthant_codes(signs: np.ndarray) -> np.ndarray:
    """Integer code of each sign row: bit ``j`` set when coordinate ``j`` is +1."""
    signs = np.atleast_2d(signs)
    if signs.shape[1] > 62:
        raise ValueError("orthant codes support d <= 62")
    return ((signs > 0).astype(np.int64) << np.arange(signs.shape[1], dtype=np.int64)).sum(axis=1)


@dataclass(frozen=True)
class OrthantMollifier:
    """``Psi_O(x) = sum_{o in O} prod_j Phi_eps(o_j x_j)``.

    Only the orthant containing ``x`` can contribute, so the fast evaluator
    is ``[sign(x) in O] * prod_j Phi_eps(|x_j|)``.
    """

    orthants: np.ndarray
    eps: float
    table_size: int = 10_000
    _codes: np.ndarray = field(init=False, repr=False)
    _phi: Mollifier1D = field(init=False, repr=False)

    def __post_init__(self):
        o = np.atleast_2d(np.asarray(self.orthants))
        if o.size and not np.all(np.isin(o, (-1, 1))):
            raise ValueError("orthants must be sign vectors")
        o = o.astype(np.int8)
        codes = orthant_codes(o) if o.size else np.zeros(0, np.int64)
        if np.unique(codes).size != codes.size:
            raise ValueError("orthant list contains duplicates")
        object.__setattr__(self, "orthants", o)
        object.__setattr__(self, "_codes", np.sort(codes))
        object.__setattr__(self, "_phi", Mollifier1D(self.eps, self.table_size))

    @property
    def d(self) -> int:
        return int(self.orthants.shape[1])

    def contains(self, x) -> np.ndarray:
        codes = orthant_codes(signs_of(np.atleast_2d(x)))
        return np.isin(codes, self._codes)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        prod = np.prod(self._phi(np.abs(x)), axis=1)
        return np.where(self.contains(x), prod, 0.0)

    def literal(self, x, phi=None) -> np.ndarray:
        """Sum over all listed orthants (reference evaluator)."""
        phi = phi or self._phi
        x = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(x.shape[0])
        for o in self.orthants:
            total += np.prod(phi(x * o), axis=1)
        return total


def psi_orthant_union(m: OrthantMollifier, x) -> np.ndarray:
    return m(x)


@dataclass(frozen=True)
class SupportReport:
    checked_zero: int
    max_abs_where_zero: float
    noise_floor: float
    checked_inside: int
    nonzero_inside: int

    @property
    def holds(self) -> bool:
        return self.max_abs_where_zero <= self.noise_floor

    def to_dict(self) -> dict:
        return {**self.__dict__, "holds": self.holds}


def _mixed_partial(f, x: np.ndarray, coords, h: float) -> np.ndarray:
    total = np.zeros(x.shape[0])
    for corner in np.ndindex(*(2,) * len(coords)):
        shift = np.zeros(x.shape[1])
        sign = 1.0
        for c, bit in zip(coords, corner):
            shift[c] = h if bit else -h
            sign *= 1.0 if bit else -1.0
        total += sign * f(x + shift)
    return total / (2 * h) ** len(coords)


def psi_support_check(m: OrthantMollifier, j_support, samples: int = 1000, rng=None) -> SupportReport:
    """Check that the mixed partial of ``Psi_O`` along ``J`` vanishes
    unless ``x`` lies in the union and ``max_{j in J} |x_j| <= eps``.

    Points are uniform on ``[-3 eps, 3 eps]^d``; points within two FD steps
    of a kink of ``|x_j|`` or of ``|x_j| = eps`` are skipped.
    """
    rng = as_generator(rng)
    coords = sorted(set(int(j) for j in j_support))
    if not coords:
        raise ValueError("j_support must be nonempty")
    eps = m.eps
    h = 1e-3 * eps
    x = rng.uniform(-3 * eps, 3 * eps, size=(samples, m.d))
    ax = np.abs(x[:, coords])
    ok = np.all((ax > 2 * h) & (np.abs(ax - eps) > 2 * h), axis=1)
    x = x[ok]
    exact = lambda y: m.literal(y, phi=lambda z: phi_eps(z, eps))
    deriv = _mixed_partial(exact, x, coords, h)
    expect_zero = ~m.contains(x) | np.any(np.abs(x[:, coords]) > eps, axis=1)
    scale = (2.0 / eps * BUMP_C / math.e) ** len(coords)
    floor = 1e-6 * scale
    zero_vals = np.abs(deriv[expect_zero])
    return SupportReport(
        checked_zero=int(expect_zero.sum()),
        max_abs_where_zero=float(zero_vals.max()) if zero_vals.size else 0.0,
        noise_floor=floor,
        checked_inside=int((~expect_zero).sum()),
        nonzero_inside=int(np.count_nonzero(np.abs(deriv[~expect_zero]) > floor)),
    )


# ---------------------------------------------------------------------------
# Box mollifiers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxMollifierPair:
    """Smooth inner/outer approximations of the box ``[-2 eps, 2 eps]^dim``.

    ``psi_in`` is 1 on ``[-2eps+xi, 2eps-xi]^dim`` and 0 outside the box;
    ``psi_out`` is 1 on the box and 0 outside ``[-2eps-xi, 2eps+xi]^dim``.
    """

    eps: float
    xi: float
    dim: int

    def __post_init__(self):
        if not 0 < self.xi < 2 * self.eps:
            raise ValueError(f"need 0 < xi < 2*eps, got xi={self.xi}, eps={self.eps}")
        check_positive_int(self.dim, "dim")

    def _prod(self, x, shift: float, exact: bool) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[1]}")
        arg = -np.abs(x) + shift
        vals = phi_eps(arg, self.xi) if exact else Mollifier1D(self.xi)(arg)
        return np.prod(vals, axis=1)

    def psi_in(self, x, exact: bool = False) -> np.ndarray:
        return self._prod(x, 2 * self.eps, exact)

    def psi_out(self, x, exact: bool = False) -> np.ndarray:
        return self._prod(x, 2 * self.eps + self.xi, exact)

    def indicator(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all(np.abs(x) <= 2 * self.eps, axis=1).astype(float)


def box_mollifier_pair(eps: float, xi: float, dim: int) -> BoxMollifierPair:
    return BoxMollifierPair(eps, xi, dim)


@dataclass(frozen=True)
class SandwichEstimate:
    lower: float
    middle: float
    upper: float
    stderr: float

    def holds(self, k: float = 3.0) -> bool:
        return (self.lower <= self.middle + k * self.stderr
                and self.middle <= self.upper + k * self.stderr)

    def to_dict(self) -> dict:
        return {**self.__dict__, "holds": self.holds()}


def _sandwich(lo, mid, hi) -> SandwichEstimate:
    m = lo.size
    # the pointwise differences carry the relevant variance
    se = max(np.std(mid - lo), np.std(hi - mid)) / math.sqrt(m)
    return SandwichEstimate(float(lo.mean()), float(mid.mean()), float(hi.mean()), float(se))


def box_sandwich(pair: BoxMollifierPair, z: np.ndarray) -> SandwichEstimate:
    """``E[psi_in(Z)] <= Pr[Z in box] <= E[psi_out(Z)]`` on samples ``z``."""
    return _sandwich(pair.psi_in(z), pair.indicator(z), pair.psi_out(z))


def orthant_sandwich(m: OrthantMollifier, z: np.ndarray) -> SandwichEstimate:
    """``E[Psi_O] <= Pr[Z in O] <= E[Psi_O] + Pr[Z in O, min |Z_i| < eps]``."""
    psi = m(z)
    inside = m.contains(z).astype(float)
    near = inside * (np.min(np.abs(np.atleast_2d(z)), axis=1) < m.eps)
    return _sandwich(psi, inside, psi + near)
