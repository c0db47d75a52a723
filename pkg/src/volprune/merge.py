"""Clustering of redundant (non-primary) tokens into contextual tokens.

The highest-weight redundant tokens act as cluster centers; every other
redundant token joins the center it is most cosine-similar to, and each
cluster is pooled into one mean feature vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataError, ImportanceVector


@dataclass(frozen=True, eq=False)
class MergeOutcome:
    clusters: tuple  # (center, members) pairs, ascending center
    contextual_tokens: np.ndarray  # (len(clusters), E)

    def __len__(self):
        return len(self.clusters)


def target_clusters(n_redundant: int, contextual_ratio: float) -> int:
    if n_redundant == 0:
        return 0
    return min(max(1, math.ceil(contextual_ratio * n_redundant)), n_redundant)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # zero vectors map to zero, i.e. similarity 0 against everything
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def bipartite_merge(redundant, v: ImportanceVector, features: np.ndarray,
                    contextual_ratio: float) -> MergeOutcome:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != v.token_count:
        raise DataError(
            f"features must be ({v.token_count}, E), got shape {features.shape}"
        )
    redundant = np.unique(np.asarray(redundant, dtype=np.int64))
    if redundant.size == 0:
        return MergeOutcome((), np.zeros((0, features.shape[1])))

    n_centers = target_clusters(redundant.size, contextual_ratio)
    by_weight = redundant[np.argsort(-v.weights[redundant], kind="stable")]
    centers = np.sort(by_weight[:n_centers])
    members = np.sort(by_weight[n_centers:])

    groups = {int(c): [] for c in centers}
    if members.size:
        sim = _unit_rows(features[members]) @ _unit_rows(features[centers]).T
        # argmax returns the first maximum, i.e. the lowest center index
        nearest = centers[np.argmax(sim, axis=1)]
        for m, c in zip(members.tolist(), nearest.tolist()):
            groups[c].append(m)

    clusters = []
    tokens = np.empty((n_centers, features.shape[1]))
    for row, c in enumerate(centers.tolist()):
        clusters.append((c, tuple(groups[c])))
        tokens[row] = features[[c] + groups[c]].mean(axis=0)
    return MergeOutcome(tuple(clusters), tokens)
