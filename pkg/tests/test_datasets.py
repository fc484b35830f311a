import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gefl.datasets import (LabeledDataset, PartitionPlan, blob_centers, glyph_templates, make_blobs,
                           make_glyphs, partition_iid, split_train_val)
from gefl.errors import DomainError
from gefl.nn import SGD, mlp, sgd_update
from gefl.metrics import accuracy


def test_zero_spread_gives_exact_centers():
    ds = make_blobs(3, 5, 20, 0.0, seed=1)
    centers = blob_centers(3, 5)
    np.testing.assert_array_equal(ds.inputs, centers[ds.labels])


def test_blobs_linearly_separable_for_a_trained_probe():
    ds = make_blobs(2, 2, 100, 0.3, seed=0)
    net = mlp([2, 2], rng=np.random.default_rng(0))
    opt = SGD(0.5)
    for _ in range(200):
        sgd_update(net, ds.inputs, ds.labels, opt)
    assert accuracy(net, ds.inputs, ds.labels) >= 0.99


def test_generation_is_deterministic():
    a, b = make_blobs(4, 8, 30, 1.0, seed=5), make_blobs(4, 8, 30, 1.0, seed=5)
    assert a.inputs.tobytes() == b.inputs.tobytes() and (a.labels == b.labels).all()
    g1, g2 = make_glyphs(4, 8, 10, 0.2, 1, seed=3), make_glyphs(4, 8, 10, 0.2, 1, seed=3)
    assert g1.inputs.tobytes() == g2.inputs.tobytes()


def test_invalid_sizes_raise():
    with pytest.raises(DomainError):
        make_blobs(1, 4, 10, 1.0, seed=0)
    with pytest.raises(DomainError):
        make_glyphs(4, 3, 10, 0.1, 0, seed=0)
    with pytest.raises(DomainError):
        make_glyphs(4, 8, 10, -0.1, 0, seed=0)


def test_clean_glyphs_equal_templates():
    ds = make_glyphs(5, 8, 6, 0.0, 0, seed=2)
    templates = glyph_templates(5, 8).reshape(5, -1)
    np.testing.assert_array_equal(ds.inputs, templates[ds.labels])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0, 3), shift=st.integers(0, 3))
def test_glyph_pixels_in_unit_interval(seed, noise, shift):
    ds = make_glyphs(4, 8, 5, noise, shift, seed)
    assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0
    assert ds.value_range == (0.0, 1.0) and ds.image_side == 8


def test_nearest_template_classifier_on_glyphs():
    ds = make_glyphs(4, 8, 200, 0.1, 0, seed=0)
    templates = glyph_templates(4, 8).reshape(4, -1)
    d = ((ds.inputs[:, None, :] - templates[None]) ** 2).sum(-1)
    assert np.mean(d.argmin(1) == ds.labels) >= 0.95


def test_shift_aware_template_classifier_on_shifted_glyphs():
    ds = make_glyphs(4, 8, 200, 0.1, 1, seed=0)
    base = glyph_templates(4, 8)
    shifted = [np.roll(np.roll(base, dy, axis=1), dx, axis=2).reshape(4, -1)
               for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    d = np.min([((ds.inputs[:, None, :] - t[None]) ** 2).sum(-1) for t in shifted], axis=0)
    assert np.mean(d.argmin(1) == ds.labels) >= 0.95


def test_single_client_full_fraction_is_a_permutation():
    ds = make_blobs(3, 4, 10, 1.0, seed=0)
    (shard,) = partition_iid(ds, PartitionPlan(1, 1.0, seed=0))
    assert sorted(shard.indices.tolist()) == list(range(len(ds)))


def test_shard_size_arithmetic():
    ds = make_blobs(10, 4, 600, 1.0, seed=0)
    shards = partition_iid(ds, PartitionPlan(10, 0.1, seed=0))
    assert [len(s) for s in shards] == [60] * 10


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 12), fraction=st.floats(0.05, 1.0), seed=st.integers(0, 1000),
       n=st.integers(20, 80))
def test_partition_disjoint_equal_and_floor_sized(k, fraction, seed, n):
    ds = make_blobs(3, 2, n, 1.0, seed=seed)
    pool = int(np.floor(fraction * len(ds) + 1e-9))
    if pool < k * 3:
        with pytest.raises(DomainError):
            partition_iid(ds, PartitionPlan(k, fraction, seed))
        return
    shards = partition_iid(ds, PartitionPlan(k, fraction, seed))
    idx = np.concatenate([s.indices for s in shards])
    assert len(np.unique(idx)) == idx.size
    assert {len(s) for s in shards} == {pool // k}
    for s in shards:
        np.testing.assert_array_equal(s.inputs, ds.inputs[s.indices])


def test_split_arithmetic_and_stratification():
    ds = make_blobs(4, 3, 50, 1.0, seed=0)
    train, val = split_train_val(ds, 0.5, seed=0)
    assert len(train) == len(val) == 100
    np.testing.assert_array_equal(val.class_counts(), [25] * 4)
    again = split_train_val(ds, 0.5, seed=0)[1]
    assert (again.indices == val.indices).all()
    with pytest.raises(DomainError):
        split_train_val(ds, 1.0, seed=0)


@settings(max_examples=30, deadline=None)
@given(ratio=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
def test_split_preserves_class_proportions_within_one(ratio, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, 90)
    labels[:3] = [0, 1, 2]
    ds = LabeledDataset(rng.standard_normal((90, 2)), labels, 3)
    train, val = split_train_val(ds, ratio, seed)
    expected = ratio * ds.class_counts()
    assert np.all(np.abs(val.class_counts() - expected) <= 1)
    assert len(train) + len(val) == 90
    assert not set(train.indices) & set(val.indices)


def test_csv_round_trip(tmp_path):
    ds = make_blobs(3, 4, 5, 1.0, seed=0)
    ds.to_csv(tmp_path / "d.csv")
    back = LabeledDataset.from_csv(tmp_path / "d.csv", num_classes=3)
    assert back.inputs.tobytes() == ds.inputs.tobytes() and (back.labels == ds.labels).all()
