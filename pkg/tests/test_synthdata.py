from __future__ import annotations

import dataclasses
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedism.errors import ConfigError, DataError, PartitionError
from fedism.synthdata import (
    CLEAN,
    CORRUPTED,
    ClientDataset,
    CorruptionSpec,
    Dataset,
    DatasetSpec,
    PartitionSpec,
    class_means,
    corrupt,
    generate,
    load_csv,
    make_test_pair,
    partition,
    train_test_split,
    write_csv,
)


def lda_train_accuracy(x, y):
    """Closed-form two-class LDA with pooled covariance, scored on its own training data."""
    m0, m1 = x[y == 0].mean(0), x[y == 1].mean(0)
    centered = np.vstack([x[y == 0] - m0, x[y == 1] - m1])
    cov = centered.T @ centered / (len(x) - 2)
    w = np.linalg.solve(cov, m1 - m0)
    b = -w @ (m0 + m1) / 2
    return np.mean((x @ w + b > 0).astype(int) == y)


def test_generate_separable_blobs_fit_by_lda():
    data = generate(DatasetSpec(2, 2, 100, 4.0, seed=7))
    assert len(data) == 200
    assert np.bincount(data.labels).tolist() == [100, 100]
    assert lda_train_accuracy(data.features, data.labels) > 0.95


def test_generate_one_sample_per_class():
    data = generate(DatasetSpec(2, 3, 1, 1.0, seed=0))
    assert len(data) == 2
    assert sorted(data.labels.tolist()) == [0, 1]


def test_generate_is_deterministic():
    spec = DatasetSpec(3, 5, 40, 2.0, seed=11)
    a, b = generate(spec), generate(spec)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


@pytest.mark.parametrize("c,d", [(2, 2), (3, 5), (4, 2), (5, 1)])
def test_class_means_pairwise_distance(c, d):
    means = class_means(c, d, 3.5)
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(c) for j in range(i + 1, c)]
    if d >= c:
        np.testing.assert_allclose(dists, 3.5)
    else:
        assert min(dists) == pytest.approx(3.5)


def test_generate_unit_covariance():
    data = generate(DatasetSpec(2, 3, 20000, 2.0, seed=1))
    cov = np.cov(data.features[data.labels == 0].T)
    np.testing.assert_allclose(cov, np.eye(3), atol=0.05)


@pytest.mark.parametrize(
    "field,value",
    [("num_classes", 1), ("feature_dim", 0), ("samples_per_class", 0), ("class_separation", 0.0)],
)
def test_generate_rejects_invalid_spec(field, value):
    spec = dataclasses.replace(DatasetSpec(2, 2, 10, 1.0), **{field: value})
    with pytest.raises(ConfigError):
        generate(spec)


def test_train_test_split_is_stratified_and_disjoint():
    data = generate(DatasetSpec(3, 2, 50, 2.0, seed=3))
    train, test = train_test_split(data, 0.2, seed=0)
    assert len(train) + len(test) == len(data)
    assert np.bincount(test.labels).tolist() == [10, 10, 10]
    rows = {r.tobytes() for r in train.features} & {r.tobytes() for r in test.features}
    assert not rows


# ---------------------------------------------------------------- partition


def _sample_multiset(clients):
    return Counter((c.labels[i], c.features[i].tobytes()) for c in clients for i in range(len(c)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 8), alpha=st.sampled_from([0.3, 1.0, 10.0]))
def test_partition_is_disjoint_and_covering(seed, k, alpha):
    data = generate(DatasetSpec(3, 2, 30, 2.0, seed=5))
    clients = partition(data, PartitionSpec(k, alpha, 0, seed=seed))
    assert len(clients) == k
    assert all(len(c) >= 1 for c in clients)
    original = Counter((data.labels[i], data.features[i].tobytes()) for i in range(len(data)))
    assert _sample_multiset(clients) == original


def test_partition_large_alpha_is_near_uniform():
    data = generate(DatasetSpec(3, 2, 400, 2.0, seed=2))
    for seed in range(20):
        clients = partition(data, PartitionSpec(4, 1e6, 0, seed=seed))
        for c in clients:
            props = np.bincount(c.labels, minlength=3) / len(c)
            np.testing.assert_allclose(props, 1 / 3, rtol=0.05)


def test_partition_no_corruption_means_all_clean():
    data = generate(DatasetSpec(2, 2, 50, 2.0))
    clients = partition(data, PartitionSpec(5, 1.0, 0, CorruptionSpec("additive_gaussian", 3.0), seed=1))
    assert {c.quality for c in clients} == {CLEAN}


def test_partition_tags_exact_corrupted_count():
    data = generate(DatasetSpec(5, 4, 200, 2.0))
    clients = partition(data, PartitionSpec(20, 1.0, 4, CorruptionSpec("additive_gaussian", 1.0, 9), seed=3))
    assert sum(c.quality == CORRUPTED for c in clients) == 4


def test_partition_corrupts_only_tagged_clients():
    data = generate(DatasetSpec(2, 3, 100, 2.0))
    spec = PartitionSpec(6, 1.0, 2, CorruptionSpec("additive_gaussian", 1.0, 4), seed=8)
    noisy = partition(data, spec)
    plain = partition(data, dataclasses.replace(spec, corrupted_client_count=0))
    for a, b in zip(noisy, plain):
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.features, b.features) == (a.quality == CLEAN)


def test_partition_is_deterministic():
    data = generate(DatasetSpec(2, 2, 60, 2.0))
    spec = PartitionSpec(4, 0.5, 1, CorruptionSpec("additive_gaussian", 1.0, 1), seed=12)
    a, b = partition(data, spec), partition(data, spec)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes() and x.quality == y.quality


def test_partition_too_many_clients():
    data = generate(DatasetSpec(2, 2, 2, 1.0))
    with pytest.raises(ConfigError):
        partition(data, PartitionSpec(5, 1.0))


def test_partition_retry_exhaustion():
    # 4 samples over 4 clients with tiny alpha: nearly every draw leaves a client empty
    data = generate(DatasetSpec(2, 1, 2, 1.0))
    with pytest.raises(PartitionError):
        partition(data, PartitionSpec(4, 1e-3, seed=0))


def test_partition_rejects_corrupted_count_above_k():
    with pytest.raises(ConfigError):
        PartitionSpec(3, 1.0, 4).validate()


def test_client_dataset_is_the_only_carrier_of_quality():
    names = {f.name for f in dataclasses.fields(ClientDataset)}
    assert "quality" in names


# ---------------------------------------------------------------- corruption


@pytest.mark.parametrize("kind", ["additive_gaussian", "smoothing"])
def test_zero_severity_is_identity(kind):
    x = np.random.default_rng(0).normal(size=(7, 5))
    assert np.array_equal(corrupt(x, CorruptionSpec(kind, 0.0, 3)), x)


def test_additive_noise_std():
    x = np.zeros((1000, 100))
    out = corrupt(x, CorruptionSpec("additive_gaussian", 2.0, seed=5))
    assert abs(np.std(out - x) - 2.0) < 0.02 * 2.0


def test_additive_noise_deterministic_in_seed():
    x = np.ones((3, 4))
    a = corrupt(x, CorruptionSpec("additive_gaussian", 1.0, 1))
    b = corrupt(x, CorruptionSpec("additive_gaussian", 1.0, 1))
    c = corrupt(x, CorruptionSpec("additive_gaussian", 1.0, 2))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_smoothing_keeps_constant_rows():
    x = np.full((3, 9), 4.25)
    np.testing.assert_array_equal(corrupt(x, CorruptionSpec("smoothing", 2.0)), x)


def test_smoothing_matches_explicit_box_average():
    x = np.arange(10.0)[None, :] ** 2
    out = corrupt(x, CorruptionSpec("smoothing", 1.0))  # width 3
    padded = np.r_[x[0, 0], x[0], x[0, -1]]
    expected = np.array([padded[i : i + 3].mean() for i in range(10)])
    np.testing.assert_allclose(out[0], expected)


def test_unknown_corruption_kind():
    with pytest.raises(ConfigError):
        corrupt(np.zeros((1, 1)), CorruptionSpec("blur", 1.0))


def test_make_test_pair():
    test = generate(DatasetSpec(2, 3, 20, 2.0))
    clean, noisy = make_test_pair(test, CorruptionSpec("additive_gaussian", 0.0))
    assert np.array_equal(clean.features, noisy.features)
    clean, noisy = make_test_pair(test, CorruptionSpec("additive_gaussian", 1.0, 4))
    assert len(clean) == len(noisy) == len(test)
    assert np.array_equal(clean.features, test.features)
    assert np.array_equal(noisy.labels, test.labels)
    assert not np.array_equal(noisy.features, test.features)


# ---------------------------------------------------------------- CSV


def test_load_csv_well_formed(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0,0\n3.5,-1,1\n0,0,2\n", encoding="utf-8")
    data = load_csv(p)
    assert len(data) == 3
    assert data.labels.tolist() == [0, 1, 2]
    assert data.features[1].tolist() == [3.5, -1.0]


def test_load_csv_reports_bad_line(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1.0,2.0,0\n1.0,abc,1\n", encoding="utf-8")
    with pytest.raises(DataError, match=r":2:"):
        load_csv(p)


def test_load_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2,0\n1,0\n", encoding="utf-8")
    with pytest.raises(DataError, match=r":2: expected 3 columns"):
        load_csv(p)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_csv(tmp_path / "nope.csv")


def test_csv_round_trip_is_bit_identical(tmp_path):
    data = generate(DatasetSpec(3, 4, 10, 1.5, seed=2))
    write_csv(data, tmp_path / "x.csv")
    back = load_csv(tmp_path / "x.csv")
    assert back.features.tobytes() == data.features.tobytes()
    assert np.array_equal(back.labels, data.labels)


def test_dataset_shape_checks():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int))
