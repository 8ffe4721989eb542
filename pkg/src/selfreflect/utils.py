"""Stable softmax / entropy helpers. All probability math runs in float64."""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Temperature-scaled softmax with max-subtraction. NaN poisons the output
    instead of raising so optimizer abort paths can detect it."""
    with np.errstate(over="ignore", invalid="ignore"):
        z = np.asarray(logits, dtype=np.float64) / float(temperature)
    m = np.max(z)
    if not np.isfinite(m):
        # all -inf, +inf present, or NaN: hand back NaNs, callers decide
        return np.full_like(z, np.nan)
    e = np.exp(z - m)
    return e / np.sum(e)


def log_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        z = np.asarray(logits, dtype=np.float64) / float(temperature)
    m = np.max(z)
    if not np.isfinite(m):
        return np.full_like(z, np.nan)
    shifted = z - m
    return shifted - math.log(np.sum(np.exp(shifted)))


def entropy_from_logits(logits, temperature: float = 1.0) -> float:
    """Shannon entropy in nats of softmax(logits/temperature), with 0*log(0)=0.

    NaN when the scaled logits are degenerate (poisoned log_softmax), so the
    failure is visible to abort checks rather than masked as zero entropy.
    """
    ls = log_softmax(logits, temperature)
    if np.isnan(ls).any():
        return float("nan")
    p = np.exp(ls)
    terms = np.where(p > 0.0, p * ls, 0.0)
    return float(-np.sum(terms))


def two_point_logits(target_entropy: float, size: int, hot: int = 0,
                     temperature: float = 1.0) -> np.ndarray:
    """Logit vector whose temperature-scaled softmax entropy equals target_entropy.

    One position (`hot`) carries a gap g >= 0 over the rest; entropy is ln(size)
    at g=0 and decreases monotonically, so bisection pins g to machine precision.
    """
    if size < 2:
        raise InputError("need at least two tokens")
    if not 0.0 < target_entropy < math.log(size):
        raise InputError(f"target entropy must lie in (0, ln {size})")

    def h(gap):
        z = np.zeros(size)
        z[hot] = gap
        return entropy_from_logits(z, temperature)

    lo, hi = 0.0, 1.0
    while h(hi) > target_entropy:
        hi *= 2.0
        if hi > 1e6:
            raise InputError("entropy target unreachable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if h(mid) > target_entropy:
            lo = mid
        else:
            hi = mid
    z = np.zeros(size)
    z[hot] = 0.5 * (lo + hi)
    return z
