import numpy as np
import pytest

from oracles import anchor_scan, l1_distance
from volprune import Volume, iaf_filter, slice_l1_distance, uniform_slice_sample


def test_distance_examples():
    v = Volume(np.stack([np.zeros((3, 3)), np.ones((3, 3))]))
    assert slice_l1_distance(v, 0, 0) == 0.0
    assert slice_l1_distance(v, 0, 1) == 1.0
    v = Volume(np.array([[[0.0, 0.5]], [[1.0, 0.5]]]))
    assert slice_l1_distance(v, 0, 1) == 0.5
    assert slice_l1_distance(v, 1, 0) == 0.5


def test_distance_index_range():
    v = Volume(np.zeros((2, 1, 1)))
    with pytest.raises(IndexError):
        slice_l1_distance(v, 0, 2)


def test_identical_slices_keep_only_first():
    v = Volume(np.full((5, 4, 4), 0.3))
    assert iaf_filter(v, 0.1).retained == (0,)


def test_negative_gamma_keeps_all(rng):
    v = Volume(rng.random((7, 3, 3)))
    assert iaf_filter(v, -1).retained == tuple(range(7))


def test_step_volume_keeps_block_starts():
    # unclamped 0.2 steps every 10 slices; block starts differ by 0.2 > 0.1
    levels = (np.arange(100) // 10) * 0.2
    v = Volume(np.broadcast_to(levels[:, None, None], (100, 4, 4)))
    expected = anchor_scan(v.data.tolist(), 0.1)
    assert expected == list(range(0, 100, 10))
    assert iaf_filter(v, 0.1).retained == tuple(expected)


def test_tie_drops_slice():
    v = Volume(np.array([[[0.0]], [[0.5]]]))
    assert iaf_filter(v, 0.5).retained == (0,)
    assert iaf_filter(v, 0.0).retained == (0, 1)


def test_first_slice_always_kept():
    v = Volume(np.zeros((3, 2, 2)))
    assert iaf_filter(v, 0.0).retained == (0,)


def test_large_gamma_keeps_only_first(rng):
    v = Volume(rng.random((10, 4, 4)))
    assert iaf_filter(v, 1.0).retained == (0,)


def test_chain_property(rng):
    for _ in range(30):
        v = Volume(rng.random((12, 3, 3)) * rng.random())
        gamma = rng.uniform(0, 0.4)
        kept = iaf_filter(v, gamma).retained
        slices = v.data.tolist()
        bounds = list(kept) + [v.depth]
        for a, nxt in zip(bounds, bounds[1:]):
            if nxt < v.depth:
                assert l1_distance(slices[nxt], slices[a]) > gamma
            for i in range(a + 1, nxt):
                assert l1_distance(slices[i], slices[a]) <= gamma


def test_deterministic(rng):
    v = Volume(rng.random((20, 4, 4)))
    assert iaf_filter(v, 0.3) == iaf_filter(v, 0.3)


@pytest.mark.parametrize("depth, stride, expected", [
    (10, 3, (0, 3, 6, 9)),
    (5, 1, (0, 1, 2, 3, 4)),
    (5, 10, (0,)),
])
def test_uniform_slice_sample(depth, stride, expected):
    assert uniform_slice_sample(depth, stride).retained == expected


def test_uniform_slice_sample_rejects_zero_stride():
    with pytest.raises(ValueError):
        uniform_slice_sample(5, 0)
