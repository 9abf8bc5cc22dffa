import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from plremix.datagen import (AugmentSpec, Dataset, NoiseSpec, augment, dump_csv, inject_noise,
                             load_csv, make_blobs, make_train_test, nearest_class_map)


def test_single_class():
    ds = make_blobs(1, 5, 2, seed=0)
    assert len(ds) == 5
    assert np.all(ds.noisy_labels == 0)


def test_same_seed_identical():
    a = make_blobs(3, 20, 4, seed=7)
    b = make_blobs(3, 20, 4, seed=7)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.digest() == b.digest()
    assert make_blobs(3, 20, 4, seed=8).digest() != a.digest()


def test_nearest_centroid_oracle():
    ds = make_blobs(4, 200, 8, separation=10, spread=1, seed=0)
    means = np.stack([ds.features[ds.true_labels == k].mean(0) for k in range(4)])
    pred = np.argmin(((ds.features[:, None] - means[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == ds.true_labels) >= 0.99


def test_centroid_pairwise_separation():
    ds = make_blobs(4, 2000, 8, separation=6, spread=0.5, seed=1)
    means = np.stack([ds.features[ds.true_labels == k].mean(0) for k in range(4)])
    d = np.linalg.norm(means[:, None] - means[None], axis=-1)
    off = d[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 6, atol=0.1)


def test_train_test_split_shapes():
    tr, te = make_train_test(3, 10, 4, 5, seed=0)
    assert len(tr) == 30 and len(te) == 12
    assert np.bincount(te.true_labels).tolist() == [4, 4, 4]


@pytest.mark.parametrize("bad", [dict(C=0), dict(dim=1), dict(separation=0.0)])
def test_make_blobs_rejects(bad):
    kw = dict(C=2, n_per_class=3, dim=2, separation=1.0) | bad
    with pytest.raises(ValueError):
        make_blobs(**kw)


def test_noise_zero_is_noop():
    ds = make_blobs(3, 50, 4, seed=0)
    out = inject_noise(ds, NoiseSpec("symmetric", 0.0), seed=1)
    assert np.array_equal(out.noisy_labels, out.true_labels)


def test_asymmetric_full_corruption():
    ds = make_blobs(4, 25, 4, seed=0)
    cyc = {k: (k + 1) % 4 for k in range(4)}
    out = inject_noise(ds, NoiseSpec("asymmetric", 1.0, cyc), seed=2)
    assert np.array_equal(out.noisy_labels, (out.true_labels + 1) % 4)


def test_symmetric_full_flip_fraction():
    ds = make_blobs(10, 1000, 4, seed=0)
    out = inject_noise(ds, NoiseSpec("symmetric", 1.0), seed=3)
    assert abs(out.realized_noise() - 0.9) < 0.02


def test_symmetric_marginal_chi2():
    # expected marginal of a class-0 sample: (1 - r) onehot + r uniform
    C, n, r = 5, 20000, 0.4
    ds = Dataset(np.zeros((n, 2)), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), C)
    out = inject_noise(ds, NoiseSpec("symmetric", r), seed=11)
    expected = n * ((1 - r) * np.eye(C)[0] + r / C)
    assert chisquare(np.bincount(out.noisy_labels, minlength=C), expected).pvalue > 1e-3


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_noise_preserves_true_labels(ratio, seed):
    ds = make_blobs(4, 10, 3, seed=0)
    out = inject_noise(ds, NoiseSpec("symmetric", ratio), seed=seed)
    assert np.array_equal(out.true_labels, ds.true_labels)
    assert np.array_equal(out.features, ds.features)


def test_asymmetric_self_map_rejected():
    with pytest.raises(ValueError):
        NoiseSpec("asymmetric", 0.3, {0: 0, 1: 0})


def test_nearest_class_map():
    x = np.array([[0.0, 0], [1, 0], [5, 0]])
    ds = Dataset(x, np.arange(3), np.arange(3), 3)
    assert nearest_class_map(ds) == {0: 1, 1: 0, 2: 1}


def test_augment_weak_identity():
    x = np.arange(6.0)
    assert np.array_equal(augment(x, AugmentSpec(weak_sigma=0.0), "weak", 0), x)


def test_augment_full_dropout_limit():
    x = np.ones((200, 16))
    out = augment(x, AugmentSpec(strong_dropout_p=0.999), "strong", 0)
    assert np.mean(out == 0) > 0.99


def test_augment_weak_displacement():
    x = np.zeros((10000, 64))
    out = augment(x, AugmentSpec(weak_sigma=0.5, strong_sigma=0.5), "weak", 4)
    msd = np.mean(np.sum(out ** 2, axis=1))
    assert abs(msd - 16.0) < 0.05 * 16.0


def test_augment_bad_strength():
    with pytest.raises(ValueError):
        augment(np.zeros(3), AugmentSpec(), "medium", 0)


def test_csv_round_trip(tmp_path):
    ds = inject_noise(make_blobs(3, 7, 4, seed=5), NoiseSpec("symmetric", 0.5), seed=1)
    p = tmp_path / "d.csv"
    dump_csv(ds, p)
    back = load_csv(p, 3)
    assert back.digest() == ds.digest()
    assert p.read_text().splitlines()[0] == "f0,f1,f2,f3,y_noisy,y_true"
