"""Shared domain types, configuration and validation."""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class PrunerError(Exception):
    """Base class for all errors raised by volprune."""


class ConfigError(PrunerError, ValueError):
    """A configuration value violates its constraint."""


class DataError(PrunerError, ValueError):
    """Array data is malformed (bad shape, non-finite values)."""


class FormatError(PrunerError, ValueError):
    """A binary file does not follow its declared layout."""


class TruncationError(FormatError):
    """A binary file is shorter (or longer) than its header declares."""


class StageError(PrunerError, ValueError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _first_nonfinite(arr: np.ndarray) -> int:
    return int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])


@dataclass(frozen=True, eq=False)
class Volume:
    """A D x H x W stack of axial slices stored as float32.

    ``data`` is slice-major, row-major within a slice, which is also the
    on-disk order of the MPRV container.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data), dtype=np.float32)
        if arr.ndim != 3:
            raise DataError(f"volume must be 3-D (D, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DataError(f"volume dimensions must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise DataError(f"non-finite value at index {_first_nonfinite(arr)}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def pixels_per_slice(self) -> int:
        return self.height * self.width

    def slice(self, i: int) -> np.ndarray:
        return self.data[i]

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()


@dataclass(frozen=True)
class PruneConfig:
    """Every tunable of the pruning pipeline.

    gamma: slice filter sensitivity, in raw intensity units. Negative keeps all slices.
    tau: cumulative importance mass each slice's primary tokens must reach.
    temperature: softmax temperature applied to the raw importance scores.
    contextual_ratio: fraction of redundant tokens kept as merge centers.
    patch_size, embed_dim, num_heads, head_dim: toy encoder geometry.
        ``embed_dim`` defaults to ``patch_size ** 2``.
    """

    gamma: float = 0.02
    tau: float = 0.9
    temperature: float = 0.05
    contextual_ratio: float = 0.1
    patch_size: int = 16
    embed_dim: Optional[int] = None
    num_heads: int = 4
    head_dim: int = 16

    def __post_init__(self):
        if self.embed_dim is None and _is_int(self.patch_size):
            object.__setattr__(self, "embed_dim", self.patch_size * self.patch_size)

    def replace(self, **changes) -> "PruneConfig":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        if "patch_size" in changes and "embed_dim" not in changes:
            values["embed_dim"] = None
        values.update(changes)
        return PruneConfig(**values)

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def _is_int(x) -> bool:
    return isinstance(x, numbers.Integral) and not isinstance(x, bool)


def _is_real(x) -> bool:
    return isinstance(x, numbers.Real) and not isinstance(x, bool)


def validate_config(cfg: PruneConfig, vol: Optional[Volume] = None) -> None:
    """Raise ConfigError naming the first violated constraint.

    Patch divisibility is only checked when ``vol`` is given.
    """
    for name in ("gamma", "tau", "temperature", "contextual_ratio"):
        value = getattr(cfg, name)
        if not _is_real(value) or not math.isfinite(value):
            raise ConfigError(f"{name} must be a finite number, got {value!r}")
    for name in ("patch_size", "embed_dim", "num_heads", "head_dim"):
        value = getattr(cfg, name)
        if not _is_int(value) or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")

    if cfg.gamma < -1:
        raise ConfigError(f"gamma out of range: must be >= -1, got {cfg.gamma}")
    if not 0 < cfg.tau <= 1:
        raise ConfigError(f"tau out of range: must be in (0, 1], got {cfg.tau}")
    if cfg.temperature <= 0:
        raise ConfigError(f"temperature out of range: must be > 0, got {cfg.temperature}")
    if not 0 <= cfg.contextual_ratio <= 1:
        raise ConfigError(
            f"contextual_ratio out of range: must be in [0, 1], got {cfg.contextual_ratio}"
        )

    if vol is not None:
        p = cfg.patch_size
        if vol.height % p:
            raise ConfigError(f"patch size must divide height: {p} does not divide {vol.height}")
        if vol.width % p:
            raise ConfigError(f"patch size must divide width: {p} does not divide {vol.width}")


@dataclass(frozen=True)
class SliceSelection:
    """Indices of the slices that survive slice filtering."""

    retained: tuple
    original_depth: int

    def __post_init__(self):
        retained = tuple(int(i) for i in self.retained)
        object.__setattr__(self, "retained", retained)
        if not retained:
            raise DataError("slice selection must be non-empty")
        if retained[0] != 0:
            raise DataError("slice selection must start at slice 0")
        if any(b <= a for a, b in zip(retained, retained[1:])):
            raise DataError("slice selection must be strictly increasing")
        if retained[-1] >= self.original_depth:
            raise DataError(
                f"slice index {retained[-1]} out of range for depth {self.original_depth}"
            )

    def __len__(self):
        return len(self.retained)


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    """Normalized per-token weights of one slice (strictly positive, sum 1)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).copy()
        if w.ndim != 1 or w.size < 1:
            raise DataError(f"importance weights must be a non-empty vector, got shape {w.shape}")
        if not np.isfinite(w).all() or (w <= 0).any():
            raise DataError("importance weights must be finite and strictly positive")
        if abs(w.sum() - 1.0) > 1e-6:
            raise DataError(f"importance weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def token_count(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class PrimarySet:
    """Selected primary tokens, in descending-weight order."""

    indices: tuple
    cumulative_mass: float

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if not self.indices:
            raise DataError("primary set must contain at least one token")
        if len(set(self.indices)) != len(self.indices):
            raise DataError("primary set contains duplicate indices")

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class SliceResult:
    slice_index: int
    primary: PrimarySet
    clusters: tuple  # of (center, tuple(members))
    contextual_tokens: np.ndarray  # (len(clusters), E)

    @property
    def retained_tokens(self) -> int:
        return len(self.primary) + len(self.clusters)


@dataclass(frozen=True, eq=False)
class PruneResult:
    config: PruneConfig
    slice_selection: SliceSelection
    slices: tuple  # of SliceResult, ascending slice_index
    tokens_per_slice: int
    timings_ms: dict = field(default_factory=dict)
    attention_source: str = "toy"

    @property
    def original_tokens(self) -> int:
        return self.slice_selection.original_depth * self.tokens_per_slice

    @property
    def retained_tokens(self) -> int:
        return sum(s.retained_tokens for s in self.slices)

    @property
    def r_rate(self) -> float:
        return self.retained_tokens / self.original_tokens

    @property
    def mean_primary_mass(self) -> float:
        return float(np.mean([s.primary.cumulative_mass for s in self.slices]))
