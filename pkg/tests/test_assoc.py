import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from reidcalib.assoc import (
    BBox,
    Tracklet,
    feature_distance,
    hungarian_assign,
    match_across_cameras,
    pool_features,
    sample_tracklet,
)
from reidcalib.errors import MissingFeatureError


def tracklet(n, cam=0, pid=1, emb=None, start=0):
    boxes = [BBox(10.0 + f, 20.0, 30.0 + f, 60.0, start + f, pid, cam) for f in range(n)]
    return Tracklet(cam, pid, boxes, emb)


def brute_force(cost):
    m, n = cost.shape
    if m <= n:
        return min(sum(cost[i, p[i]] for i in range(m)) for p in itertools.permutations(range(n), m))
    return min(sum(cost[p[j], j] for j in range(n)) for p in itertools.permutations(range(m), n))


# -- types ------------------------------------------------------------------------


def test_bbox_invariants():
    with pytest.raises(ValueError):
        BBox(10, 10, 5, 20)
    with pytest.raises(ValueError):
        BBox(0, 0, math.inf, 1)


def test_tracklet_requires_increasing_frames():
    b = [BBox(0, 0, 1, 1, 3), BBox(0, 0, 1, 1, 2)]
    with pytest.raises(ValueError):
        Tracklet(0, 0, b)


def test_tracklet_requires_shared_ids():
    with pytest.raises(ValueError):
        Tracklet(0, 1, [BBox(0, 0, 1, 1, 0, person_id=2)])


# -- sampling ------------------------------------------------------------------------


def test_sample_exact_length_returns_all():
    t = tracklet(8)
    s = sample_tracklet(t, 8, seed=5)
    assert s.boxes == t.boxes


def test_sample_chunk_bounds():
    t = tracklet(800)
    for seed in range(20):
        s = sample_tracklet(t, 8, seed=seed)
        assert len(s) == 8
        for k, b in enumerate(s.boxes):
            assert 100 * k <= b.frame < 100 * (k + 1)


def test_sample_short_tracklet_cycles():
    t = tracklet(3)
    s = sample_tracklet(t, 8, seed=1)
    assert len(s) == 8
    assert [b.frame for b in s.boxes] == [0, 0, 0, 1, 1, 1, 2, 2]
    assert sample_tracklet(t, 8, seed=1).boxes == sample_tracklet(t, 8, seed=2).boxes


def test_sample_deterministic_and_ordered():
    t = tracklet(57, emb=np.random.default_rng(0).normal(size=(57, 4)))
    s1, s2 = sample_tracklet(t, 8, seed=9), sample_tracklet(t, 8, seed=9)
    assert s1.boxes == s2.boxes and np.array_equal(s1.embeddings, s2.embeddings)
    frames = [b.frame for b in s1.boxes]
    assert frames == sorted(frames)
    # embeddings follow their boxes
    assert np.array_equal(s1.embeddings, t.embeddings[frames])


# -- pooling and distance -------------------------------------------------------------


def test_pool_equal_embeddings():
    v = np.array([3.0, 4.0, 0.0])
    assert np.allclose(pool_features(tracklet(5, emb=np.tile(v, (5, 1)))), v / 5.0)


def test_pool_two_axes():
    f = pool_features(tracklet(2, emb=np.eye(2)))
    assert np.allclose(f, [1 / math.sqrt(2)] * 2, atol=1e-15)


def test_pool_matches_direct_recomputation():
    E = np.random.default_rng(1).normal(size=(8, 32))
    mean = E.sum(axis=0) / 8
    assert np.abs(pool_features(tracklet(8, emb=E)) - mean / math.sqrt(mean @ mean)).max() < 1e-12


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, (6, 5), elements=st.floats(-10, 10)))
def test_pool_unit_norm(E):
    if np.linalg.norm(E.mean(axis=0)) < 1e-6:
        return
    assert abs(np.linalg.norm(pool_features(tracklet(6, emb=E))) - 1) < 1e-12


def test_pool_missing_embeddings():
    with pytest.raises(MissingFeatureError):
        pool_features(tracklet(3))


def test_feature_distance_examples():
    assert feature_distance([1, 2, 3], [1, 2, 3]) == 0
    assert feature_distance([1, 0], [0, 1]) == pytest.approx(math.sqrt(2), abs=1e-15)
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=16), rng.normal(size=16)
    assert abs(feature_distance(a, b) - math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))) < 1e-12
    with pytest.raises(ValueError):
        feature_distance([1, 2], [1, 2, 3])


# -- Hungarian ------------------------------------------------------------------------


def test_hungarian_2x2():
    a = hungarian_assign([[1, 2], [2, 1]])
    assert a.matches == [(0, 0), (1, 1)] and a.total_cost == 2


def test_hungarian_identity_cost():
    C = 1 - np.eye(5)
    a = hungarian_assign(C)
    assert a.matches == [(i, i) for i in range(5)] and a.total_cost == 0


def test_hungarian_6x6_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        C = rng.uniform(0, 10, (6, 6))
        assert hungarian_assign(C).total_cost == pytest.approx(brute_force(C), abs=1e-9)


def test_hungarian_brute_force_1000_cases():
    rng = np.random.default_rng(4)
    for case in range(1000):
        m, n = rng.integers(1, 8, size=2)
        # integer costs create many ties, which exercises the tie-break
        C = rng.integers(0, 5, (m, n)).astype(float) if case % 2 else rng.uniform(-5, 5, (m, n))
        a = hungarian_assign(C)
        assert len(a.matches) == min(m, n)
        assert a.total_cost == pytest.approx(brute_force(C), abs=1e-9)
        assert len({i for i, _ in a.matches}) == len(a.matches) == len({j for _, j in a.matches})
        assert sorted([i for i, _ in a.matches] + a.unmatched_a) == list(range(m))
        assert sorted([j for _, j in a.matches] + a.unmatched_b) == list(range(n))


def test_hungarian_max_cost_gate():
    a = hungarian_assign([[0.1, 5.0], [5.0, 3.0]], max_cost=1.0)
    assert a.matches == [(0, 0)] and a.unmatched_a == [1] and a.unmatched_b == [1]


def test_hungarian_rejects_nonfinite():
    with pytest.raises(ValueError):
        hungarian_assign([[1.0, math.nan]])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda m: st.integers(1, 6).flatmap(
    lambda n: hnp.arrays(float, (m, n), elements=st.integers(0, 3).map(float)))))
def test_hungarian_transpose_symmetry(C):
    a = hungarian_assign(C)
    b = hungarian_assign(C.T)
    assert a.total_cost == pytest.approx(b.total_cost, abs=1e-9)


# -- matching across cameras ------------------------------------------------------------


def identity_tracklets(rng, n_people, noise, cam, pids=None, means=None, dim=32):
    means = rng.normal(size=(n_people, dim)) if means is None else means
    means = means / np.linalg.norm(means, axis=1, keepdims=True)
    pids = list(range(n_people)) if pids is None else pids
    out = []
    for p, pid in zip(range(n_people), pids):
        emb = means[p] + rng.normal(0, noise, (40, dim))
        out.append(tracklet(40, cam, pid, emb))
    return out, means


def test_match_identical_sets():
    rng = np.random.default_rng(5)
    a, means = identity_tracklets(rng, 6, 0.0, 0)
    b, _ = identity_tracklets(rng, 6, 0.0, 1, means=means)
    m = match_across_cameras(a, b)
    assert m.matches == [(i, i) for i in range(6)]
    assert m.total_cost == pytest.approx(0, abs=1e-12)


def test_match_noisy_embeddings_all_correct():
    rng = np.random.default_rng(6)
    a, means = identity_tracklets(rng, 10, 0.05, 0)
    perm = rng.permutation(10)
    b, _ = identity_tracklets(rng, 10, 0.05, 1, pids=[100 + p for p in range(10)], means=means[perm])
    m = match_across_cameras(a, b)
    assert all(perm[j] == i for i, j in m.matches) and len(m.matches) == 10


def test_match_rectangular():
    rng = np.random.default_rng(7)
    a, means = identity_tracklets(rng, 10, 0.05, 0)
    b, _ = identity_tracklets(rng, 7, 0.05, 1, means=means[:7])
    m = match_across_cameras(a, b)
    assert len(m.matches) == 7 and len(m.unmatched_a) == 3 and m.unmatched_b == []
    assert sorted(m.unmatched_a) == [7, 8, 9]


def test_match_symmetric_under_swap():
    rng = np.random.default_rng(8)
    a, means = identity_tracklets(rng, 8, 0.3, 0)
    b, _ = identity_tracklets(rng, 6, 0.3, 1, means=means[rng.permutation(8)[:6]])
    ab = match_across_cameras(a, b)
    ba = match_across_cameras(b, a)
    assert sorted((j, i) for i, j in ab.matches) == sorted(ba.matches)
