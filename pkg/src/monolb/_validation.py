"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

import numbers

import numpy as np

# sign(0) = +1 everywhere; coordinates with |x| <= ZERO_TOL * scale count as 0
ZERO_TOL = 1e-12


def as_generator(random_state=None) -> np.random.Generator:
    """Coerce ``None``, an int seed, a ``SeedSequence`` or a ``Generator``."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, np.random.SeedSequence):
        return np.random.default_rng(random_state)
    if random_state is None or isinstance(random_state, numbers.Integral):
        return np.random.default_rng(random_state)
    raise TypeError(f"cannot build a Generator from {type(random_state).__name__}")


def check_odd(value, name: str = "ell", minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum or value % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= {minimum}, got {value}")
    return value


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_sign_matrix(rows, name: str = "rows") -> np.ndarray:
    """Return ``rows`` as a 2-D int8 array with entries in {-1, +1}."""
    arr = np.asarray(rows)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isin(arr, (-1, 1))):
        raise ValueError(f"{name} entries must be +1 or -1")
    return arr.astype(np.int8)


def signs_of(x, scale: float | None = None) -> np.ndarray:
    """Coordinatewise sign with sign(0) = +1, as int8.

    Values within ``ZERO_TOL * scale`` of zero are treated as exact zeros so
    that sums which vanish in exact arithmetic do not pick up a round-off sign.
    """
    x = np.asarray(x, dtype=float)
    if scale is None:
        scale = 1.0
    return np.where(x >= -ZERO_TOL * scale, 1, -1).astype(np.int8)
