"""Dataset handling tests: CSV round trips, domain splits and the
synthetic covariate-shift generator."""

import numpy as np
import pytest

from fedada import data


def small_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    schema = [
        data.ColumnSpec("age", "numeric", data.ACTIVE),
        data.ColumnSpec("income", "numeric", data.PASSIVE_C),
        data.ColumnSpec(
            "edu", "categorical", data.PASSIVE_C, vocab=("hs", "bsc", "msc")
        ),
    ]
    columns = {
        "age": rng.uniform(18, 80, size=n),
        "income": rng.normal(size=n),
        "edu": rng.integers(0, 3, size=n).astype(np.int64),
    }
    labels = rng.integers(0, 2, size=n).astype(np.int64)
    labels[:2] = [0, 1]
    return data.TabularDataset(schema, columns, labels)


# --------------------------------------------------------------- CSV I/O


def test_csv_round_trip(tmp_path):
    ds = small_dataset()
    csv_path = str(tmp_path / "d.csv")
    schema_path = str(tmp_path / "s.json")
    data.save_csv(ds, csv_path, schema_path)
    import json

    with open(schema_path) as fh:
        schema_cfg = json.load(fh)
    back = data.load_csv(csv_path, schema_cfg)
    assert np.array_equal(back.labels, ds.labels)
    assert np.allclose(back.columns["age"], ds.columns["age"])
    assert np.array_equal(back.columns["edu"], ds.columns["edu"])
    assert [s.name for s in back.schema] == [s.name for s in ds.schema]


def test_load_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    schema_cfg = {
        "label": "label",
        "columns": [{"name": "x", "kind": "numeric", "party": "active"}],
    }
    p.write_text("x,label\nnot_a_number,1\n")
    with pytest.raises(data.DataError, match="row 0"):
        data.load_csv(str(p), schema_cfg)
    p.write_text("y,label\n1.0,1\n")
    with pytest.raises(data.DataError, match="not in CSV header"):
        data.load_csv(str(p), schema_cfg)
    p.write_text("x,label\n1.0,maybe\n")
    with pytest.raises(data.DataError, match="label"):
        data.load_csv(str(p), schema_cfg)
    cat_cfg = {
        "label": "label",
        "columns": [
            {"name": "x", "kind": "categorical", "party": "active", "vocab": ["a"]}
        ],
    }
    p.write_text("x,label\nzzz,1\n")
    with pytest.raises(data.DataError, match="out-of-vocab"):
        data.load_csv(str(p), cat_cfg)


def test_dataset_validation():
    ds = small_dataset()
    with pytest.raises(data.DataError, match="binary"):
        data.TabularDataset(ds.schema, ds.columns, np.full(ds.n, 2))
    with pytest.raises(data.DataError, match="missing"):
        data.TabularDataset(ds.schema, {"age": ds.columns["age"]}, ds.labels)
    with pytest.raises(data.DataError):
        data.ColumnSpec("x", "weird", data.ACTIVE)
    with pytest.raises(data.DataError):
        data.ColumnSpec("x", "categorical", data.ACTIVE)  # no vocab


def test_party_views_are_disjoint():
    ds = small_dataset()
    idx = np.arange(5)
    active = ds.view(idx, data.ACTIVE)
    passive = ds.view(idx, data.PASSIVE_C)
    assert set(active) == {"age"}
    assert set(passive) == {"income", "edu"}


# ----------------------------------------------------------- domain splits


def test_split_domains_partition_and_sizes():
    ds = small_dataset(n=200, seed=1)
    split = data.split_domains(
        ds,
        {
            "column": "edu",
            "target_values": ["msc"],
            "n_target_labeled": 10,
            "n_target_unlabeled": 15,
            "n_target_test": 20,
        },
        seed=3,
    )
    c = split.counts()
    assert (c["target_labeled"], c["target_unlabeled"], c["target_test"]) == (10, 15, 20)
    # every target row satisfies the predicate, every source row does not
    msc = ds.schema[2].vocab.index("msc")
    for idx in (split.target_labeled, split.target_unlabeled, split.target_test):
        assert np.all(ds.columns["edu"][idx] == msc)
    assert np.all(ds.columns["edu"][split.source] != msc)
    # no index reuse across target partitions
    all_target = np.concatenate(
        [split.target_labeled, split.target_unlabeled, split.target_test]
    )
    assert len(np.unique(all_target)) == len(all_target)


def test_split_domains_standardize_uses_source_stats_only():
    ds = small_dataset(n=200, seed=2)
    split = data.split_domains(
        ds,
        {
            "column": "edu",
            "target_values": ["msc"],
            "n_target_labeled": 10,
            "standardize": True,
        },
        seed=0,
    )
    src_age = split.dataset.columns["age"][split.source]
    assert np.mean(src_age) == pytest.approx(0.0, abs=1e-10)
    assert np.std(src_age) == pytest.approx(1.0, abs=1e-10)
    # target rows use the source statistics, so they need not be centered
    tgt_age = split.dataset.columns["age"][split.target_labeled]
    raw = ds.columns["age"]
    mean, std = np.mean(raw[split.source]), np.std(raw[split.source])
    assert np.allclose(tgt_age, (raw[split.target_labeled] - mean) / std)


def test_split_domains_errors():
    ds = small_dataset(n=50)
    with pytest.raises(data.DataError):
        data.split_domains(
            ds, {"column": "nope", "target_values": [1], "n_target_labeled": 1}
        )
    with pytest.raises(data.DataError, match="exceed"):
        data.split_domains(
            ds,
            {"column": "edu", "target_values": ["msc"], "n_target_labeled": 9999},
        )


def test_subsample_positives():
    ds = small_dataset(n=300, seed=5)
    split = data.split_domains(
        ds,
        {"column": "edu", "target_values": ["msc"], "n_target_labeled": 40},
        seed=1,
    )
    sub = data.subsample_positives(split, n_pos=3, seed=0, total=20)
    labels = ds.labels[sub.target_labeled]
    assert int(np.sum(labels == 1)) == 3
    assert len(sub.target_labeled) <= 20
    assert set(sub.target_labeled) <= set(split.target_labeled)
    with pytest.raises(data.DataError):
        data.subsample_positives(split, n_pos=10**6)


# ------------------------------------------------------ synthetic generator


@pytest.fixture(scope="module")
def synth():
    cfg = data.SynthConfig(
        k=3,
        group_dim=3,
        m_active=2,
        n_source=300,
        n_source_test=50,
        n_target_labeled=40,
        n_target_unlabeled=60,
        n_target_test=100,
        shift=2.0,
        shift_spread=0.0,  # shift every group so covariate checks see movement
    )
    return cfg, data.synth_shift(cfg, seed=0)


def test_synth_shapes_and_split(synth):
    cfg, (ds, split) = synth
    assert ds.n == 300 + 50 + 40 + 60 + 100
    assert split.counts() == {
        "source": 300,
        "target_labeled": 40,
        "target_unlabeled": 60,
        "target_test": 100,
        "source_test": 50,
    }
    assert len(ds.party_columns(data.ACTIVE)) == cfg.m_active
    assert len(ds.party_columns(data.PASSIVE_C)) == cfg.k * cfg.group_dim
    # source / target partitions tile the row range without overlap
    everything = np.concatenate(
        [split.source, split.source_test, split.target_labeled,
         split.target_unlabeled, split.target_test]
    )
    assert np.array_equal(np.sort(everything), np.arange(ds.n))


def test_synth_is_reproducible(synth):
    cfg, (ds, _) = synth
    ds2, _ = data.synth_shift(cfg, seed=0)
    ds3, _ = data.synth_shift(cfg, seed=1)
    for name in ds.columns:
        assert np.array_equal(ds.columns[name], ds2.columns[name])
    assert not np.array_equal(ds.columns["c0_0"], ds3.columns["c0_0"])


def test_synth_shift_is_covariate_only(synth):
    """Source rows are identical with and without the shift; only target
    feature columns move, never the labels."""
    cfg, (ds, split) = synth
    import dataclasses

    ds0, _ = data.synth_shift(dataclasses.replace(cfg, shift=0.0), seed=0)
    assert np.array_equal(ds.labels, ds0.labels)
    for name in ds.party_columns(data.ACTIVE):
        assert np.array_equal(ds.columns[name], ds0.columns[name])
    for name in ds.party_columns(data.PASSIVE_C):
        assert np.array_equal(
            ds.columns[name][split.source], ds0.columns[name][split.source]
        )
        assert not np.array_equal(
            ds.columns[name][split.target_test], ds0.columns[name][split.target_test]
        )


def test_synth_group_map_covers_all_passive_columns(synth):
    cfg, (ds, _) = synth
    gm = data.synth_group_map(cfg)
    cols = [c for group in gm.values() for c in group]
    assert sorted(cols) == sorted(ds.party_columns(data.PASSIVE_C))
    assert len(gm) == cfg.k


def test_synth_config_validation():
    with pytest.raises(data.DataError):
        data.SynthConfig(k=0)
    with pytest.raises(data.DataError):
        data.SynthConfig(group_dim=0)
