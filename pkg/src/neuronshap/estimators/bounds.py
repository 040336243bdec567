"""Empirical Bernstein confidence intervals."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["bernstein_half_width", "bernstein_bounds"]


def bernstein_half_width(variance, t, delta: float, range_r: float):
    """Half-width ``sqrt(2 ln(2/delta) var / t) + 7 R ln(2/delta) / (3 (t - 1))``.

    Works elementwise on arrays. Entries with ``t < 2`` get ``inf``.
    """
    if not 0 < delta <= 1:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if range_r <= 0:
        raise ValueError(f"range must be > 0, got {range_r}")
    log_term = math.log(2.0 / delta)
    var = np.maximum(np.asarray(variance, dtype=float), 0.0)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        hw = np.sqrt(2.0 * log_term * var / t) + 7.0 * range_r * log_term / (3.0 * (t - 1.0))
    hw = np.where(t >= 2, hw, np.inf)
    return float(hw) if hw.ndim == 0 else hw


def bernstein_bounds(mean: float, variance: float, t: int, delta: float, range_r: float = 1.0) -> tuple[float, float]:
    """Symmetric interval around ``mean``; ``(-inf, inf)`` while ``t < 2``."""
    hw = bernstein_half_width(variance, t, delta, range_r)
    return mean - hw, mean + hw
