"""Attention-derived token importance.

Includes the closed-form toy encoder used when no external query/key
matrices are supplied. Its weights are sinusoids of the flat element index,
so every implementation produces the same values without sharing a PRNG.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ConfigError, DataError, ImportanceVector, PruneConfig


@dataclass(frozen=True, eq=False)
class HeadStack:
    """Per-head query and key matrices of one slice, each (heads, M, head_dim)."""

    q: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q)
        k = np.asarray(self.k)
        if q.ndim != 3 or q.shape != k.shape:
            raise DataError(
                f"Q and K must share a (heads, tokens, head_dim) shape, got {q.shape} and {k.shape}"
            )
        if min(q.shape) < 1:
            raise DataError(f"head stack dimensions must be >= 1, got {q.shape}")
        if not (np.isfinite(q).all() and np.isfinite(k).all()):
            raise DataError("head stack contains non-finite values")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)

    @property
    def num_heads(self) -> int:
        return self.q.shape[0]

    @property
    def tokens(self) -> int:
        return self.q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.q.shape[2]


@lru_cache(maxsize=8)
def _encoder_weights(p: int, embed_dim: int, num_heads: int, head_dim: int):
    a = np.arange(p * p, dtype=np.float64)[:, None]
    b = np.arange(embed_dim, dtype=np.float64)[None, :]
    w_embed = np.sin(a * embed_dim + b + 1) / np.sqrt(p * p)

    h = np.arange(num_heads, dtype=np.float64)[:, None, None]
    a = np.arange(embed_dim, dtype=np.float64)[None, :, None]
    b = np.arange(head_dim, dtype=np.float64)[None, None, :]
    phase = h * embed_dim * head_dim + a * head_dim + b + 1
    w_q = np.sin(phase) / np.sqrt(embed_dim)
    w_k = np.cos(phase) / np.sqrt(embed_dim)
    for w in (w_embed, w_q, w_k):
        w.setflags(write=False)
    return w_embed, w_q, w_k


def patchify(pixels: np.ndarray, p: int) -> np.ndarray:
    """Split an H x W slice into (H/p * W/p, p*p) flattened patches.

    Patches follow a row-major patch grid; pixels inside a patch are row-major.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    height, width = pixels.shape
    if height % p or width % p:
        raise ConfigError(f"patch size {p} must divide slice shape {height}x{width}")
    grid = pixels.reshape(height // p, p, width // p, p).transpose(0, 2, 1, 3)
    return grid.reshape(-1, p * p)


def embed_patches(pixels: np.ndarray, cfg: PruneConfig) -> np.ndarray:
    w_embed, _, _ = _encoder_weights(cfg.patch_size, cfg.embed_dim, cfg.num_heads, cfg.head_dim)
    return patchify(pixels, cfg.patch_size) @ w_embed


def project_heads(features: np.ndarray, cfg: PruneConfig) -> HeadStack:
    _, w_q, w_k = _encoder_weights(cfg.patch_size, cfg.embed_dim, cfg.num_heads, cfg.head_dim)
    return HeadStack(np.matmul(features[None], w_q), np.matmul(features[None], w_k))


def toy_encode(pixels: np.ndarray, cfg: PruneConfig):
    """Deterministic stand-in for a ViT encoder: returns (features (M, E), HeadStack)."""
    features = embed_patches(pixels, cfg)
    return features, project_heads(features, cfg)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def head_attention(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Row-stochastic attention map softmax(q k^T / sqrt(head_dim)), shape (M, M)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or q.shape != k.shape:
        raise DataError(f"Q and K must be equal-shape (M, head_dim) matrices, got {q.shape} and {k.shape}")
    if not (np.isfinite(q).all() and np.isfinite(k).all()):
        raise DataError("Q/K contain non-finite values")
    return _softmax_rows(q @ k.T / np.sqrt(q.shape[1]))


def aggregate_importance(stack: HeadStack) -> np.ndarray:
    """Raw importance: attention received by each token, averaged over heads and queries."""
    q = stack.q.astype(np.float64)
    k = stack.k.astype(np.float64)
    logits = np.matmul(q, k.transpose(0, 2, 1)) / np.sqrt(stack.head_dim)
    s_avg = _softmax_rows(logits).mean(axis=0)
    return s_avg.mean(axis=0)


def temperature_softmax(scores: np.ndarray, temperature: float) -> ImportanceVector:
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    scores = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(scores).all():
        raise DataError("importance scores contain non-finite values")
    z = scores / temperature
    e = np.exp(z - z.max())
    # underflow floor: weights must stay strictly positive
    e = np.maximum(e, np.finfo(np.float64).tiny)
    return ImportanceVector(e / e.sum())
