import math

import numpy as np
import pytest

from oracles import anchor_scan, minimal_prefix
from volprune import (
    PruneConfig,
    StageError,
    Volume,
    aggregate_importance,
    bipartite_merge,
    compare_methods,
    iaf_filter,
    nucleus_select,
    prune_volume,
    run_ablation,
    tau_sweep,
    temperature_softmax,
    toy_encode,
)
from volprune.merge import target_clusters
from volprune.synth import (
    make_lesion_volume,
    make_skewed_headstack,
    make_step_volume,
    make_uniform_headstack,
)

SMALL = PruneConfig(patch_size=2, num_heads=2, head_dim=4, temperature=0.02)


def test_pass_through(rng):
    vol = Volume(rng.random((5, 4, 4)))
    res = prune_volume(vol, SMALL.replace(gamma=-1, tau=1.0, contextual_ratio=1.0))
    assert res.r_rate == 1.0
    assert res.retained_tokens == res.original_tokens == 5 * 4


def test_duplicates_single_token():
    vol = Volume(np.full((5, 16, 16), 0.4))
    for tau in (0.1, 0.9, 1.0):
        res = prune_volume(vol, PruneConfig(tau=tau))
        assert res.slice_selection.retained == (0,)
        assert res.slices[0].primary.indices == (0,)
        assert res.r_rate == 0.2


def test_step_volume_skewed_attention():
    vol = make_step_volume(100, 256, 256, block=10, delta=0.1)
    attention = [make_skewed_headstack(256, 16, 0, 20.0)] * 100
    cfg = PruneConfig(tau=0.9, contextual_ratio=0.0)
    res = prune_volume(vol, cfg, attention)

    # composed oracles: constant slices, so one pixel per slice carries the full L1 distance
    kept = anchor_scan(vol.data[:, :1, :1].tolist(), cfg.gamma)
    assert kept == list(range(0, 100, 10))
    v = temperature_softmax(aggregate_importance(attention[0]), cfg.temperature)
    k = len(minimal_prefix(v.weights.tolist(), 0.9)[0])
    assert k == 1
    expected = len(kept) * (k + target_clusters(256 - k, 0.0)) / (100 * 256)
    assert expected == 20 / 25600
    assert res.r_rate == expected


def test_composition_matches_manual(rng):
    for _ in range(100):
        d = int(rng.integers(1, 17))
        h, w = 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3))
        vol = Volume(rng.random((d, h, w)) * rng.random())
        cfg = SMALL.replace(gamma=float(rng.uniform(-0.1, 0.3)), tau=float(rng.uniform(0.05, 1)),
                            contextual_ratio=float(rng.random()))
        res = prune_volume(vol, cfg)
        sel = iaf_filter(vol, cfg.gamma)
        assert res.slice_selection == sel
        for i, sr in zip(sel.retained, res.slices):
            feats, stack = toy_encode(vol.slice(i), cfg)
            v = temperature_softmax(aggregate_importance(stack), cfg.temperature)
            primary = nucleus_select(v, cfg.tau)
            redundant = sorted(set(range(v.token_count)) - set(primary.indices))
            merged = bipartite_merge(redundant, v, feats, cfg.contextual_ratio)
            assert sr.slice_index == i
            assert sr.primary.indices == primary.indices
            assert sr.clusters == merged.clusters
            np.testing.assert_allclose(sr.contextual_tokens, merged.contextual_tokens, atol=1e-6)
        detail = sum(len(s.primary) + len(s.clusters) for s in res.slices)
        assert abs(detail / res.original_tokens - res.r_rate) <= 1e-12
        assert 0 < res.r_rate <= 1


def test_external_attention_errors(rng):
    vol = Volume(rng.random((3, 4, 4)))
    with pytest.raises(StageError, match="attention covers 2 slices"):
        prune_volume(vol, SMALL, [make_uniform_headstack(4, 2)] * 2)
    with pytest.raises(StageError, match="M=5"):
        prune_volume(vol, SMALL, [make_uniform_headstack(5, 2)] * 3)
    with pytest.raises(StageError, match="config"):
        prune_volume(vol, SMALL.replace(patch_size=3))


def test_external_attention_indexed_by_original_slice():
    vol = make_step_volume(20, 4, 4, block=10, delta=0.5)
    attention = [make_skewed_headstack(4, 2, i % 4, 20.0) for i in range(20)]
    res = prune_volume(vol, SMALL.replace(tau=0.5), attention)
    assert [s.slice_index for s in res.slices] == [0, 10]
    assert [s.primary.indices[0] for s in res.slices] == [0, 2]


def test_ablation_variants():
    vol = make_step_volume(100, 32, 32, block=10, delta=0.1)
    rows = run_ablation(vol, PruneConfig())
    by = {r["variant"]: r for r in rows}
    assert [r["variant"] for r in rows] == ["original", "iaf_only", "primary_only", "primary_redundant", "full"]
    assert by["original"]["r_rate"] == 1.0
    assert by["iaf_only"]["r_rate"] == pytest.approx(0.1, abs=1e-15)
    assert by["full"]["r_rate"] <= by["iaf_only"]["r_rate"]
    assert by["primary_only"]["retained_tokens"] <= by["primary_redundant"]["retained_tokens"]
    assert by["primary_only"]["retained_slices"] == 100


def test_tau_sweep_monotone():
    vol = make_lesion_volume(24, 32, 32, 12, 10, 0.8)
    taus = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
    rows = tau_sweep(vol, PruneConfig(patch_size=4), taus)
    rates = [r["r_rate"] for r in rows]
    assert rates == sorted(rates)
    for tau, r in zip(taus, rows):
        assert r["mean_mass"] >= tau - 1e-9


def test_tau_sweep_at_one_is_pass_through_rate(rng):
    vol = Volume(rng.random((6, 4, 4)))
    cfg = SMALL.replace(gamma=-1, contextual_ratio=1.0)
    (row,) = tau_sweep(vol, cfg, [1.0])
    assert row["r_rate"] == 1.0


def test_tau_sweep_rejects_bad_tau(rng):
    with pytest.raises(ValueError, match="tau"):
        tau_sweep(Volume(rng.random((2, 2, 2))), SMALL, [0.5, 0.0])


def test_compare_methods():
    vol = make_step_volume(40, 32, 32, block=10, delta=0.2)
    rows = compare_methods(vol, PruneConfig(), ratio=0.223)
    by = {r["method"]: r for r in rows}
    assert set(by) == {"pruner", "fixed_ratio", "uniform_slice"}
    assert by["fixed_ratio"]["retained_tokens"] == 40 * round(0.223 * 4)
    assert by["uniform_slice"]["retained_slices"] == 4
    assert by["uniform_slice"]["r_rate"] == pytest.approx(0.1)


def test_skew_adaptivity_below_five_percent():
    vol = make_step_volume(60, 64, 64, block=10, delta=0.1)
    attention = [make_skewed_headstack(16, 8, 3, 20.0)] * 60
    res = prune_volume(vol, PruneConfig(contextual_ratio=0.05), attention)
    assert 60 >= 2 * len(res.slices)
    assert res.r_rate < 0.05
    assert math.isclose(res.r_rate, 6 * 2 / (60 * 16))
