"""Closed-form synthetic volumes and attention inputs (no randomness)."""

from __future__ import annotations

import numpy as np

from .core import Volume
from .saliency import HeadStack


def make_step_volume(depth: int, height: int, width: int, block: int, delta: float) -> Volume:
    """Constant slices whose value rises by ``delta`` every ``block`` slices, clamped to [0, 1]."""
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    levels = np.clip((np.arange(depth) // block) * delta, 0.0, 1.0)
    data = np.broadcast_to(levels[:, None, None], (depth, height, width))
    return Volume(data)


def make_lesion_volume(depth: int, height: int, width: int, center: float,
                       radius: float, amplitude: float) -> Volume:
    """Background 0.1 plus a linear spherical bump at (center, H/2, W/2)."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    z = (np.arange(depth) - center)[:, None, None]
    y = (np.arange(height) - height / 2)[None, :, None]
    x = (np.arange(width) - width / 2)[None, None, :]
    dist = np.sqrt(z * z + y * y + x * x)
    return Volume(0.1 + amplitude * np.maximum(0.0, 1.0 - dist / radius))


def make_skewed_headstack(tokens: int, head_dim: int, dominant: int, gap: float) -> HeadStack:
    """One head in which every query gives logit ``gap`` to ``dominant`` and 0 elsewhere."""
    if not 0 <= dominant < tokens:
        raise ValueError(f"dominant index {dominant} out of range for {tokens} tokens")
    q = np.zeros((1, tokens, head_dim))
    k = np.zeros((1, tokens, head_dim))
    q[0, :, 0] = 1.0
    k[0, dominant, 0] = gap * np.sqrt(head_dim)
    return HeadStack(q, k)


def make_uniform_headstack(tokens: int, head_dim: int, heads: int = 1) -> HeadStack:
    """All-zero Q/K: every attention row is uniform."""
    zeros = np.zeros((heads, tokens, head_dim))
    return HeadStack(zeros, zeros.copy())
