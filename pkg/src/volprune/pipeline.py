"""Slice filtering -> saliency -> primary selection -> merging, plus baselines."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConfigError,
    PruneConfig,
    PruneResult,
    PrunerError,
    SliceResult,
    SliceSelection,
    StageError,
    Volume,
    validate_config,
)
from .dins import fixed_ratio_select, nucleus_select
from .iaf import iaf_filter, uniform_slice_sample
from .merge import bipartite_merge
from .saliency import aggregate_importance, embed_patches, project_heads, temperature_softmax


@dataclass(frozen=True, eq=False)
class SliceSaliency:
    slice_index: int
    features: np.ndarray
    importance: object  # ImportanceVector


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def _check_inputs(vol: Volume, cfg: PruneConfig, attention) -> int:
    """Validate and return the per-slice token count M."""
    try:
        validate_config(cfg, vol)
    except ConfigError as exc:
        raise StageError("config", str(exc)) from exc
    m = (vol.height // cfg.patch_size) * (vol.width // cfg.patch_size)
    if attention is not None:
        if len(attention) < vol.depth:
            raise StageError(
                "attention",
                f"attention covers {len(attention)} slices but the volume has {vol.depth}",
            )
        counts = {stack.tokens for stack in attention[:vol.depth]}
        if len(counts) != 1:
            raise StageError("attention", f"inconsistent token counts across slices: {sorted(counts)}")
        if counts != {m}:
            raise StageError(
                "attention",
                f"attention has M={counts.pop()} tokens per slice but the "
                f"{cfg.patch_size}px patch grid of a {vol.height}x{vol.width} slice has {m}",
            )
    return m


def compute_saliency(vol: Volume, selection: SliceSelection, cfg: PruneConfig,
                     attention=None) -> list:
    """Features and normalized importance for each selected slice.

    External attention blocks are looked up by original slice index; token
    features always come from the toy patch embedding.
    """
    out = []
    for i in selection.retained:
        try:
            features = embed_patches(vol.slice(i), cfg)
            stack = attention[i] if attention is not None else project_heads(features, cfg)
            scores = aggregate_importance(stack)
            out.append(SliceSaliency(i, features, temperature_softmax(scores, cfg.temperature)))
        except PrunerError as exc:
            raise StageError("saliency", f"slice {i}: {exc}") from exc
    return out


def _token_stage(saliency: Sequence[SliceSaliency], cfg: PruneConfig, timings: dict,
                 merge: bool = True, select=None) -> list:
    select = select or (lambda v: nucleus_select(v, cfg.tau))
    results = []
    for item in saliency:
        t0 = time.perf_counter()
        try:
            primary = select(item.importance)
        except PrunerError as exc:
            raise StageError("dins", f"slice {item.slice_index}: {exc}") from exc
        timings["dins"] += _ms(t0)

        t0 = time.perf_counter()
        if merge:
            chosen = set(primary.indices)
            redundant = [j for j in range(item.importance.token_count) if j not in chosen]
            try:
                outcome = bipartite_merge(redundant, item.importance, item.features, cfg.contextual_ratio)
            except PrunerError as exc:
                raise StageError("merge", f"slice {item.slice_index}: {exc}") from exc
            clusters, tokens = outcome.clusters, outcome.contextual_tokens
        else:
            clusters, tokens = (), np.zeros((0, item.features.shape[1]))
        timings["merge"] += _ms(t0)
        results.append(SliceResult(item.slice_index, primary, clusters, tokens))
    return results


def prune_volume(vol: Volume, cfg: Optional[PruneConfig] = None, attention=None, *,
                 use_iaf: bool = True, merge: bool = True) -> PruneResult:
    """Run the full pruning pipeline on one volume.

    ``attention`` is an optional sequence of HeadStacks indexed by original
    slice; without it the toy encoder supplies Q/K. ``use_iaf`` and ``merge``
    switch stages off for ablations.
    """
    cfg = cfg or PruneConfig()
    m = _check_inputs(vol, cfg, attention)
    timings = dict.fromkeys(("iaf", "saliency", "dins", "merge", "total"), 0.0)
    start = time.perf_counter()

    t0 = time.perf_counter()
    if use_iaf:
        selection = iaf_filter(vol, cfg.gamma)
    else:
        selection = uniform_slice_sample(vol.depth, 1)
    timings["iaf"] = _ms(t0)

    t0 = time.perf_counter()
    saliency = compute_saliency(vol, selection, cfg, attention)
    timings["saliency"] = _ms(t0)

    slices = _token_stage(saliency, cfg, timings, merge=merge)
    timings["total"] = _ms(start)
    return PruneResult(
        config=cfg,
        slice_selection=selection,
        slices=tuple(slices),
        tokens_per_slice=m,
        timings_ms=timings,
        attention_source="toy" if attention is None else "external",
    )


ABLATION_VARIANTS = ("original", "iaf_only", "primary_only", "primary_redundant", "full")


def run_ablation(vol: Volume, cfg: Optional[PruneConfig] = None, attention=None) -> list:
    """Token accounting for each ablation variant, in ``ABLATION_VARIANTS`` order."""
    cfg = cfg or PruneConfig()
    m = _check_inputs(vol, cfg, attention)
    original = vol.depth * m
    iaf_sel = iaf_filter(vol, cfg.gamma)

    def row(name, n_slices, n_tokens):
        return {"variant": name, "r_rate": n_tokens / original,
                "retained_slices": n_slices, "retained_tokens": n_tokens}

    rows = [row("original", vol.depth, original),
            row("iaf_only", len(iaf_sel), len(iaf_sel) * m)]
    for name, use_iaf, merge in (("primary_only", False, False),
                                 ("primary_redundant", False, True),
                                 ("full", True, True)):
        res = prune_volume(vol, cfg, attention, use_iaf=use_iaf, merge=merge)
        rows.append(row(name, len(res.slices), res.retained_tokens))
    return rows


def tau_sweep(vol: Volume, cfg: Optional[PruneConfig], taus: Sequence[float], attention=None) -> list:
    """Retention and mean captured mass per tau, reusing one slice selection and saliency pass."""
    cfg = cfg or PruneConfig()
    for tau in taus:
        if not (isinstance(tau, (int, float)) and 0 < tau <= 1):
            raise ConfigError(f"tau out of range: must be in (0, 1], got {tau}")
    m = _check_inputs(vol, cfg, attention)
    selection = iaf_filter(vol, cfg.gamma)
    saliency = compute_saliency(vol, selection, cfg, attention)
    rows = []
    for tau in taus:
        timings = dict.fromkeys(("dins", "merge"), 0.0)
        slices = _token_stage(saliency, cfg.replace(tau=tau), timings)
        retained = sum(s.retained_tokens for s in slices)
        rows.append({
            "tau": tau,
            "r_rate": retained / (vol.depth * m),
            "mean_mass": float(np.mean([s.primary.cumulative_mass for s in slices])),
        })
    return rows


def compare_methods(vol: Volume, cfg: Optional[PruneConfig], ratio: float, attention=None,
                    stride: Optional[int] = None) -> list:
    """This pipeline vs. a fixed-ratio token baseline vs. fixed-stride slice sampling.

    fixed_ratio keeps the top ``ratio`` of tokens on every slice, no merging.
    uniform_slice keeps all tokens of every ``stride``-th slice; by default the
    stride matches the slice count the filter retained.
    """
    cfg = cfg or PruneConfig()
    if not 0 < ratio <= 1:
        raise ConfigError(f"ratio out of range: must be in (0, 1], got {ratio}")
    if stride is not None and stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    m = _check_inputs(vol, cfg, attention)
    original = vol.depth * m

    full = prune_volume(vol, cfg, attention)
    rows = [{"method": "pruner", "r_rate": full.r_rate, "retained_slices": len(full.slices),
             "retained_tokens": full.retained_tokens, "mean_mass": full.mean_primary_mass}]

    everything = compute_saliency(vol, uniform_slice_sample(vol.depth, 1), cfg, attention)
    timings = dict.fromkeys(("dins", "merge"), 0.0)
    fixed = _token_stage(everything, cfg, timings, merge=False,
                         select=lambda v: fixed_ratio_select(v, ratio))
    kept = sum(s.retained_tokens for s in fixed)
    rows.append({"method": "fixed_ratio", "r_rate": kept / original, "retained_slices": vol.depth,
                 "retained_tokens": kept,
                 "mean_mass": float(np.mean([s.primary.cumulative_mass for s in fixed]))})

    if stride is None:
        stride = max(1, math.ceil(vol.depth / len(full.slices)))
    sampled = uniform_slice_sample(vol.depth, stride)
    kept = len(sampled) * m
    rows.append({"method": "uniform_slice", "r_rate": kept / original,
                 "retained_slices": len(sampled), "retained_tokens": kept, "mean_mass": 1.0})
    return rows

