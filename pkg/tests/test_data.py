import numpy as np
import pytest

from fedpop.data import (
    Dataset,
    EmptyShard,
    NonNumericFeature,
    ParseError,
    PartitionSpec,
    generate_synthetic,
    label_histogram,
    load_csv,
    partition,
    write_manifest,
)
from fedpop.fl_engine import Architecture, ClientHPs, ModelWeights, accuracy, loc


def _train_centralized(data, epochs, seed=0):
    arch = Architecture("logreg", data.num_features, data.num_classes)
    w0 = ModelWeights(np.zeros(arch.dim), arch)
    hps = ClientHPs(learning_rate=0.1, local_epochs=epochs, batch_size=32)
    return accuracy(loc(hps, w0, data, np.random.default_rng(seed)), data)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2)), np.array([], dtype=int), 2)


def test_synthetic_balanced(rng):
    d = generate_synthetic(1003, 4, 5, 2.0, rng)
    h = label_histogram(d)
    assert h.max() - h.min() <= 1
    assert d.features.shape == (1003, 4)


def test_synthetic_learnable(rng):
    d = generate_synthetic(1000, 10, 5, 3.0, rng)
    assert _train_centralized(d, 200) >= 0.90


def test_synthetic_separable(rng):
    d = generate_synthetic(100, 2, 2, 100.0, rng)
    assert _train_centralized(d, 50) == 1.0


def test_synthetic_no_separation(rng):
    d = generate_synthetic(100, 2, 2, 0.0, rng)
    assert abs(_train_centralized(d, 50) - 0.5) <= 0.10


def _all_indices(shards):
    return np.concatenate([np.concatenate([s.train.indices, s.val.indices, s.test.indices]) for s in shards])


@pytest.mark.parametrize("scheme", ["iid", "dirichlet"])
def test_partition_exhaustive_disjoint(scheme, rng):
    d = generate_synthetic(1000, 5, 4, 2.0, rng)
    shards = partition(d, PartitionSpec(scheme, 10, 1.0), rng)
    idx = _all_indices(shards)
    assert len(idx) == len(d)
    assert np.array_equal(np.sort(idx), np.arange(len(d)))
    for s in shards:
        assert np.array_equal(s.train.labels, d.labels[s.train.indices])
        assert len(s.train) and len(s.val) and len(s.test)


def test_partition_deterministic():
    d = generate_synthetic(500, 3, 3, 1.0, np.random.default_rng(0))
    a = partition(d, PartitionSpec("dirichlet", 5, 0.5), np.random.default_rng(4))
    b = partition(d, PartitionSpec("dirichlet", 5, 0.5), np.random.default_rng(4))
    assert _all_indices(a).tobytes() == _all_indices(b).tobytes()


def _client_props(s):
    h = sum(label_histogram(x) for x in (s.train, s.val, s.test))
    return h / h.sum()


def test_iid_partition_sizes_and_balance():
    # Monte Carlo over 20 seeds: each client's class histogram, averaged over
    # seeds, stays within 10% (relative) of the global histogram.
    props = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = generate_synthetic(1000, 5, 4, 2.0, rng)
        shards = partition(d, PartitionSpec("iid", 10), rng)
        assert all(len(s.train) + len(s.val) + len(s.test) == 100 for s in shards)
        props.append([_client_props(s) for s in shards])
    mean_props = np.mean(props, axis=0)
    glob = np.full(4, 0.25)
    assert np.all(np.abs(mean_props - glob) <= 0.10 * glob)


def test_dirichlet_large_concentration_matches_global(rng):
    # Large shards so multinomial assignment noise stays well under 2 points.
    d = generate_synthetic(100_000, 2, 5, 2.0, rng)
    shards = partition(d, PartitionSpec("dirichlet", 10, 1e6), rng)
    glob = label_histogram(d) / len(d)
    for s in shards:
        assert np.max(np.abs(_client_props(s) - glob)) <= 0.02


def _mean_tv(x, seeds=range(20)):
    tvs = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        d = generate_synthetic(2000, 5, 10, 2.0, rng)
        shards = partition(d, PartitionSpec("dirichlet", 10, x), rng)
        glob = label_histogram(d) / len(d)
        tvs.append(np.mean([0.5 * np.abs(_client_props(s) - glob).sum() for s in shards]))
    return float(np.mean(tvs))


def test_dirichlet_heterogeneity_monotone():
    tv = [_mean_tv(x) for x in (0.5, 1.0, 1e6)]
    assert tv[0] > tv[1] > tv[2]


def test_partition_empty_shard(rng):
    d = generate_synthetic(30, 2, 2, 1.0, rng)
    with pytest.raises(EmptyShard):
        partition(d, PartitionSpec("iid", 20), rng)


def test_partition_spec_validation():
    with pytest.raises(ValueError):
        PartitionSpec("iid", 0)
    with pytest.raises(ValueError):
        PartitionSpec("dirichlet", 3, 0.0)
    with pytest.raises(ValueError):
        PartitionSpec("iid", 3, 1.0, (0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        PartitionSpec("pathological", 3)


def test_manifest(tmp_path, rng):
    import json

    d = generate_synthetic(200, 2, 2, 1.0, rng)
    shards = partition(d, PartitionSpec("iid", 4), rng)
    write_manifest(shards, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert set(doc) == {"0", "1", "2", "3"}
    assert sorted(sum((v["train"] + v["val"] + v["test"] for v in doc.values()), [])) == list(range(200))


def test_load_csv_labels(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,f2,y\n1,2,a\n2,4,b\n3,6,a\n4,8,b\n")
    d = load_csv(p, "y")
    assert d.num_classes == 2
    assert d.labels.tolist() == [0, 1, 0, 1]
    np.testing.assert_allclose(d.features.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(d.features.std(axis=0), 1, atol=1e-12)


def test_load_csv_constant_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("c,f,y\n5,1,a\n5,2,b\n5,3,a\n")
    d = load_csv(p, "y")
    assert np.all(d.features[:, 0] == 0.0)


def test_load_csv_bad_cell(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f1,y\n1,a\n2,b\nx1,a\n4,b\n")
    with pytest.raises(ParseError, match="row 3") as exc:
        load_csv(p, "y")
    assert exc.value.row == 3 and exc.value.column == "f1"


def test_load_csv_non_numeric_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("name,f,y\nann,1,a\nbob,2,b\n")
    with pytest.raises(NonNumericFeature):
        load_csv(p, "y")


def test_load_csv_missing_label(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f,y\n1,a\n")
    with pytest.raises(ParseError):
        load_csv(p, "label")
