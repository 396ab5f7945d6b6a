"""Input validation helpers used by the public functions and estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigurationError


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_real(value, name, positive=False, nonnegative=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigurationError(f"{name} must be finite, got {value}")
    if positive and value <= 0:
        raise ConfigurationError(f"{name} must be > 0, got {value}")
    if nonnegative and value < 0:
        raise ConfigurationError(f"{name} must be >= 0, got {value}")
    return value


def check_energy(value, name="E", allow_complex=False):
    if allow_complex and isinstance(value, numbers.Complex) and not isinstance(value, numbers.Real):
        value = complex(value)
        if not (np.isfinite(value.real) and np.isfinite(value.imag)):
            raise ConfigurationError(f"{name} must be finite")
        return value
    return check_real(value, name)


def check_square(matrix, name, size=None):
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigurationError(f"{name} must be a square matrix, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ConfigurationError(f"{name} must be {size}x{size}, got {arr.shape}")
    return arr


def check_increasing(values, name):
    seq = [check_int(v, name, minimum=1) for v in values]
    if not seq:
        raise ConfigurationError(f"{name} must be non-empty")
    if any(b <= a for a, b in zip(seq, seq[1:])):
        raise ConfigurationError(f"{name} must be strictly increasing, got {seq}")
    return seq


def check_interval(interval, name="interval"):
    try:
        lo, hi = (float(v) for v in interval)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a pair (lo, hi)") from exc
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ConfigurationError(f"{name} must satisfy lo <= hi, got ({lo}, {hi})")
    return lo, hi
