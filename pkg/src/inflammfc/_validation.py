"""Small argument checks shared across the package."""

import math

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of the model."""


def check_finite(value, name):
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


def check_nonnegative(value, name):
    value = check_finite(value, name)
    if value < 0.0:
        raise DomainError(f"{name} must be >= 0, got {value!r}")
    return value


def check_positive(value, name):
    value = check_finite(value, name)
    if value <= 0.0:
        raise DomainError(f"{name} must be > 0, got {value!r}")
    return value


def check_grid(t, step, name="t"):
    """Verify that ``t`` is a uniform grid with spacing ``step``."""
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise DomainError(f"{name} must be a 1-D grid with at least two samples")
    if not np.allclose(np.diff(t), step, rtol=1e-9, atol=1e-12):
        raise DomainError(f"{name} is not uniformly spaced at step {step!r}")
    return t
