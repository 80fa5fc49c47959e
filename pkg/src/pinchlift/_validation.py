"""Small input-validation helpers shared by the estimators and data types."""
from __future__ import annotations

import math
import numbers

import numpy as np


def check_vector(x, size: int, name: str = "vector") -> np.ndarray:
    a = np.array(x, dtype=float).reshape(-1)
    if a.shape != (size,):
        raise ValueError(f"{name} must have {size} elements, got shape {np.shape(x)}")
    # a nan/inf anywhere poisons the dot; cheaper than isfinite().all() on tiny arrays
    if not math.isfinite(a.dot(a)):
        raise ValueError(f"{name} contains non-finite values: {a!r}")
    return a


def check_points(x, name: str = "points") -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 1 and a.size == 3:
        a = a.reshape(1, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be (K, 3), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_positive(x, name: str, strict: bool = True) -> float:
    if not isinstance(x, numbers.Real) or not np.isfinite(x):
        raise ValueError(f"{name} must be a finite real number, got {x!r}")
    if (strict and x <= 0) or (not strict and x < 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {x!r}")
    return float(x)


def check_range(r, name: str, lo=-np.inf, hi=np.inf):
    """A closed interval ``(a, b)`` with ``a <= b`` inside ``[lo, hi]``."""
    try:
        a, b = (float(v) for v in r)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a pair (low, high), got {r!r}") from None
    if not (np.isfinite(a) and np.isfinite(b)) or a > b:
        raise ValueError(f"{name} must satisfy low <= high, got {r!r}")
    if a < lo or b > hi:
        raise ValueError(f"{name}={r!r} outside allowed [{lo}, {hi}]")
    return (a, b)


def check_random_state(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"cannot build a random generator from {seed!r}")
