"""Anchor-based inter-slice filtering.

Slices are scanned in order against a running anchor. A slice survives, and
becomes the new anchor, only when its mean absolute difference from the
anchor is strictly greater than ``gamma``.
"""

from __future__ import annotations

import numpy as np

from .core import SliceSelection, Volume


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).mean())


def slice_l1_distance(vol: Volume, i: int, j: int) -> float:
    """Pixel-wise mean absolute difference between slices ``i`` and ``j``."""
    for idx in (i, j):
        if not 0 <= idx < vol.depth:
            raise IndexError(f"slice index {idx} out of range for depth {vol.depth}")
    return _l1(vol.slice(i), vol.slice(j))


def iaf_filter(vol: Volume, gamma: float) -> SliceSelection:
    retained = [0]
    anchor = vol.slice(0).astype(np.float64)
    for i in range(1, vol.depth):
        current = vol.slice(i).astype(np.float64)
        if float(np.abs(current - anchor).mean()) > gamma:
            retained.append(i)
            anchor = current
    return SliceSelection(tuple(retained), vol.depth)


def uniform_slice_sample(depth: int, stride: int) -> SliceSelection:
    """Fixed-interval baseline: slices 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return SliceSelection(tuple(range(0, depth, stride)), depth)
