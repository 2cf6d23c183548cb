import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsrgan.similarity import build_neighbor_index, class_means, cosine_matrix, cosine_sim


def full_sort_neighbors(sem, q, pool, k):
    cands = [p for p in sorted(pool) if p != q]
    sims = {p: cosine_sim(sem[q], sem[p]) for p in cands}
    return tuple(sorted(cands, key=lambda p: (-sims[p], p))[:k])


def test_cosine_examples():
    v = np.array([0.3, -2.0, 5.0])
    assert cosine_sim(v, v) == pytest.approx(1.0)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 0], [1, 1]) == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_rejects_zero_and_mismatch():
    with pytest.raises(ValueError, match="zero"):
        cosine_sim([0, 0], [1, 0])
    with pytest.raises(ValueError, match="mismatch"):
        cosine_sim([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        cosine_matrix(np.zeros((2, 2)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(seed, alpha):
    a, b = np.random.default_rng(seed).normal(size=(2, 6))
    assert cosine_sim(alpha * a, b) == pytest.approx(cosine_sim(a, b), abs=1e-12)


def test_class_means_examples():
    x = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, -1.0]])
    c = class_means(x, [0, 0, 1], [0, 1])
    np.testing.assert_array_equal(c.values, [[1, 1], [5, -1]])
    assert c.class_ids == (0, 1)
    with pytest.raises(ValueError, match="no samples"):
        class_means(x, [0, 0, 1], [0, 1, 2])


def test_class_means_match_brute_force_exactly():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 4))
    y = rng.integers(0, 3, size=60)
    c = class_means(x, y, [0, 1, 2])
    for k in range(3):
        acc = np.zeros(4)
        n = 0
        for row, label in zip(x, y):
            if label == k:
                acc = acc + row
                n += 1
        np.testing.assert_array_equal(c.values[k], acc / n)


def test_neighbor_hand_example():
    sem = np.array([[1.0, 0.0], [0.0, 1.0], [0.9, 0.1], [1.0, 0.0]])
    idx = build_neighbor_index(sem, [3], [0, 1, 2], 2)
    assert idx.lookup(3)[0] == (0, 2)
    np.testing.assert_allclose(idx.lookup(3)[1], [1.0, cosine_sim([1, 0], [0.9, 0.1])])


def test_full_pool_is_sorted_and_self_excluded():
    sem = np.random.default_rng(0).normal(size=(6, 3))
    idx = build_neighbor_index(sem, [0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 4, 5], 5)
    for q in range(6):
        nbrs, sims = idx.lookup(q)
        assert q not in nbrs and len(nbrs) == 5
        assert list(sims) == sorted(sims, reverse=True)


def test_ties_go_to_lower_id():
    sem = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 3.0]])
    assert build_neighbor_index(sem, [0], [1, 2, 3], 2).lookup(0)[0] == (1, 2)


def test_clamp_warns():
    sem = np.random.default_rng(1).normal(size=(4, 3))
    with pytest.warns(UserWarning, match="clamping"):
        idx = build_neighbor_index(sem, [0, 1], [0, 1, 2], 10)
    assert len(idx.lookup(0)[0]) == 2


@pytest.mark.parametrize("seed", range(100))
def test_heap_selection_equals_full_sort(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 50))
    sem = rng.normal(size=(n, int(rng.integers(2, 12))))
    pool = sorted(rng.choice(n, size=n // 2, replace=False).tolist())
    queries = list(range(n))
    k = int(rng.integers(1, len(pool) - 1))
    idx = build_neighbor_index(sem, queries, pool, k)
    for q in queries:
        assert idx.lookup(q)[0] == full_sort_neighbors(sem, q, pool, k)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_neighbors_invariant_to_positive_rescaling(seed):
    rng = np.random.default_rng(seed)
    sem = rng.normal(size=(12, 5))
    scaled = sem * rng.uniform(0.1, 10, size=(12, 1))
    a = build_neighbor_index(sem, range(8, 12), range(8), 4)
    b = build_neighbor_index(scaled, range(8, 12), range(8), 4)
    assert a.neighbors == b.neighbors
    np.testing.assert_allclose(a.similarities, b.similarities, atol=1e-12)


def test_dense_layout():
    sem = np.random.default_rng(2).normal(size=(5, 3))
    idx = build_neighbor_index(sem, [3, 4], [0, 1, 2], 2)
    mask, target = idx.dense((3, 4), (0, 1, 2))
    assert mask.sum() == 4
    for r, q in enumerate((3, 4)):
        for c, s in zip(*idx.lookup(q)):
            assert mask[r, c] == 1 and target[r, c] == s
