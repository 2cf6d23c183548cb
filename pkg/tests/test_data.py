import numpy as np
import pytest
from scipy.stats import spearmanr

from lsrgan.data import (
    DataError,
    FeatureDataset,
    MinibatchSampler,
    SemanticTable,
    SynthSpec,
    load_dataset,
    make_synthetic,
    sample_minibatch,
    write_dataset,
)
from lsrgan.similarity import class_means, cosine_matrix


def upper(m):
    return m[np.triu_indices_from(m, k=1)]


def files(d):
    return [d / "visual.txt", d / "semantic.txt", d / "split.txt"]


def test_synthetic_is_deterministic_and_valid():
    a, sa, la = make_synthetic(SynthSpec(seed=4))
    b, sb, lb = make_synthetic(SynthSpec(seed=4))
    np.testing.assert_array_equal(a.train_x, b.train_x)
    np.testing.assert_array_equal(sa.vectors, sb.vectors)
    np.testing.assert_array_equal(la, lb)
    assert a.summary() == {"C_s": 12, "C_u": 4, "V": 32, "n_train": 960, "n_test_seen": 240, "n_test_unseen": 400}
    assert np.abs(np.concatenate([a.train_x, a.test_seen_x, a.test_unseen_x])).max() == pytest.approx(0.9)


def test_noiseless_identity_maps_give_identical_similarity_structure():
    spec = SynthSpec(latent_dim=6, visual_dim=6, semantic_dim=6, sigma_x=0, sigma_t=0, maps="identity", max_abs=0)
    ds, sem, _ = make_synthetic(spec)
    x = np.concatenate([ds.train_x, ds.test_seen_x, ds.test_unseen_x])
    y = np.concatenate([ds.train_y, ds.test_seen_y, ds.test_unseen_y])
    cents = class_means(x, y, range(ds.num_classes)).values
    np.testing.assert_allclose(cosine_matrix(cents), cosine_matrix(sem.vectors), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_default_spec_preserves_similarity_ranking(seed):
    ds, sem, _ = make_synthetic(SynthSpec(seed=seed))
    x = np.concatenate([ds.train_x, ds.test_unseen_x])
    y = np.concatenate([ds.train_y, ds.test_unseen_y])
    cents = class_means(x, y, range(ds.num_classes)).values
    rho = spearmanr(upper(cosine_matrix(cents)), upper(cosine_matrix(sem.vectors)))[0]
    assert rho > 0.9


def test_zero_visual_noise_gives_zero_within_class_variance():
    ds, _, _ = make_synthetic(SynthSpec(sigma_x=0))
    for k in range(ds.num_seen):
        assert np.ptp(ds.train_x[ds.train_y == k], axis=0).max() == 0.0


def test_round_trip(tmp_path):
    ds, sem, _ = make_synthetic(SynthSpec(seed=1, samples_per_class=10))
    write_dataset(tmp_path, ds, sem)
    back, bsem, id_map = load_dataset(*files(tmp_path))
    for name in ("train_x", "train_y", "test_seen_x", "test_seen_y", "test_unseen_x", "test_unseen_y"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    np.testing.assert_array_equal(bsem.vectors, sem.vectors)
    assert id_map == {k + 1: k for k in range(16)}


def test_external_ids_are_remapped_and_holdout_applied(tmp_path):
    (tmp_path / "visual.txt").write_text(
        "# comment\n2 8 3\n" + "".join(f"{c} {i}.0 1.0\n" for i, c in enumerate([30, 30, 30, 10, 10, 10, 20, 20]))
    )
    (tmp_path / "semantic.txt").write_text("2 3\n10 1 0\n20 0 1\n30 1 1\n")
    (tmp_path / "split.txt").write_text("seen: 30 10\nunseen: 20\n")
    ds, sem, id_map = load_dataset(*files(tmp_path), holdout=0.34)
    assert id_map == {30: 0, 10: 1, 20: 2}
    np.testing.assert_array_equal(sem.vectors, [[1, 1], [1, 0], [0, 1]])
    assert ds.test_seen_y.size == 2 and ds.train_y.size == 4 and ds.test_unseen_y.tolist() == [2, 2]


@pytest.mark.parametrize(
    "visual, semantic, split, match",
    [
        ("2 1 2\n1 0.5\n", "2 2\n1 1 0\n2 0 1\n", "seen: 1\nunseen: 2\n", r"visual.txt:2: expected 2 features"),
        ("2 1 2\n1 0.5 x\n", "2 2\n1 1 0\n2 0 1\n", "seen: 1\nunseen: 2\n", r"visual.txt:2"),
        ("2 1 2\n1 0.5 1\n", "2 2\n1 1 0\n", "seen: 1\nunseen: 2\n", r"header declares 2 classes"),
        ("2 1 2\n1 0.5 1\n", "2 2\n1 1 0\n3 0 1\n", "seen: 1\nunseen: 2\n", r"no semantic vector for class 2"),
        ("2 1 2\n7 0.5 1\n", "2 2\n1 1 0\n2 0 1\n", "seen: 1\nunseen: 2\n", r"visual.txt:2: label 7"),
        ("2 1 2\n1 0.5 1\n", "2 2\n1 1 0\n2 0 1\n", "seen: 1 2\nunseen: 2\n", r"overlap"),
        ("2 1 2\n1 0.5 1\n", "2 2\n1 1 0\n2 0 1\n", "seen: 1\n", r"missing 'unseen:'"),
        ("2 1 2\n1 0.5 1\n", "2 2\n1 0 0\n2 0 1\n", "seen: 1\nunseen: 2\n", r"all zeros"),
    ],
)
def test_reader_diagnostics(tmp_path, visual, semantic, split, match):
    for f, text in zip(files(tmp_path), (visual, semantic, split)):
        f.write_text(text)
    with pytest.raises(DataError, match=match):
        load_dataset(*files(tmp_path), holdout=0.0)


@pytest.mark.parametrize("v, l, cs, cu", [(2048, 85, 40, 10), (64, 7551, 150, 50)])
def test_benchmark_shaped_inputs_accepted(v, l, cs, cu):
    n = cs + cu
    rng = np.random.default_rng(0)
    ds = FeatureDataset(
        train_x=rng.random((cs, v)), train_y=np.arange(cs),
        test_seen_x=rng.random((1, v)), test_seen_y=[0],
        test_unseen_x=rng.random((cu, v)), test_unseen_y=np.arange(cs, n),
        num_seen=cs, num_unseen=cu,
    )
    sem = SemanticTable(rng.random((n, l)) + 0.01)
    assert ds.num_classes == sem.num_classes


def test_dataset_invariants():
    with pytest.raises(DataError, match="seen labels"):
        FeatureDataset(np.ones((2, 2)), [0, 1], np.ones((0, 2)), [], np.ones((1, 2)), [1], 1, 1)
    with pytest.raises(DataError, match="no training samples"):
        FeatureDataset(np.ones((1, 2)), [0], np.ones((0, 2)), [], np.ones((1, 2)), [2], 2, 1)


def test_sampler_phases_and_determinism():
    ds, sem, _ = make_synthetic(SynthSpec(samples_per_class=10))
    s = MinibatchSampler(ds, sem)
    b = s.sample("seen", 8, np.random.default_rng(0))
    assert b.features.shape == (8, 32) and np.all(b.labels < 12)
    for x, y in zip(b.features, b.labels):
        assert any(np.array_equal(x, r) for r in ds.train_x[ds.train_y == y])
    served = s.features_served
    u = s.sample("unseen", 8, np.random.default_rng(0))
    assert u.features is None and np.all(u.labels >= 12) and s.features_served == served
    np.testing.assert_array_equal(u.semantics, sem.vectors[u.labels])
    a1 = sample_minibatch(ds, sem, "seen", 5, np.random.default_rng(3))
    a2 = sample_minibatch(ds, sem, "seen", 5, np.random.default_rng(3))
    np.testing.assert_array_equal(a1.features, a2.features)


def test_sampler_covers_every_seen_class():
    ds, sem, _ = make_synthetic(SynthSpec(samples_per_class=10))
    labels = MinibatchSampler(ds, sem).sample("seen", 10_000, np.random.default_rng(0)).labels
    assert set(labels.tolist()) == set(range(12))


def test_spec_validation():
    with pytest.raises(ValueError):
        make_synthetic(SynthSpec(maps="identity"))
    with pytest.raises(ValueError):
        make_synthetic(SynthSpec(sigma_x=-1))
