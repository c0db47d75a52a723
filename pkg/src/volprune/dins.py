"""Per-slice primary token selection by cumulative importance mass."""

from __future__ import annotations

import math

import numpy as np

from .core import ConfigError, ImportanceVector, PrimarySet

# slack on the threshold comparison so tau=1 selects every token despite rounding
MASS_EPS = 1e-9


def rank_tokens(v: ImportanceVector) -> np.ndarray:
    """Token indices by descending weight; equal weights keep index order."""
    return np.argsort(-v.weights, kind="stable")


def nucleus_select(v: ImportanceVector, tau: float) -> PrimarySet:
    """Smallest top-weight prefix whose summed weight reaches ``tau``."""
    if not 0 < tau <= 1:
        raise ConfigError(f"tau out of range: must be in (0, 1], got {tau}")
    order = rank_tokens(v)
    mass = np.cumsum(v.weights[order])
    reached = np.flatnonzero(mass >= tau - MASS_EPS)
    # weights sum to 1 within 1e-6, so fall back to all tokens if rounding leaves tau=1 short
    k = int(reached[0]) + 1 if reached.size else order.size
    return PrimarySet(order[:k], float(mass[k - 1]))


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def fixed_ratio_select(v: ImportanceVector, ratio: float) -> PrimarySet:
    """Fixed-fraction baseline: keep the top ``round(ratio * M)`` tokens (at least one)."""
    if not 0 < ratio <= 1:
        raise ConfigError(f"ratio out of range: must be in (0, 1], got {ratio}")
    m = v.token_count
    k = min(max(1, round_half_away(ratio * m)), m)
    order = rank_tokens(v)[:k]
    return PrimarySet(order, float(v.weights[order].sum()))
