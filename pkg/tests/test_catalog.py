from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.catalog import (
    Catalog,
    InteractionLog,
    WorldConfig,
    generate_synthetic_world,
    load_catalog,
    save_catalog,
    split_interactions,
)
from convrec.errors import CatalogLoadError, ConfigError


def test_generate_respects_config_bounds():
    cfg = WorldConfig(n_users=50, n_items=200, n_attrs=30,
                      attrs_per_item=(3, 6), interactions_per_user=(10, 20))
    catalog, log = generate_synthetic_world(cfg, seed=7)
    assert catalog.n_users == 50 and catalog.n_items == 200 and catalog.n_attrs == 30
    for attrs in catalog.item_attrs:
        assert 3 <= len(attrs) <= 6
        assert all(0 <= a < 30 for a in attrs)
    counts = Counter(u for u, _ in log.records)
    assert set(counts) == set(range(50))
    assert all(10 <= c <= 20 for c in counts.values())


def test_generate_deterministic():
    cfg = WorldConfig(n_users=10, n_items=30, n_attrs=12)
    a = generate_synthetic_world(cfg, seed=5)
    b = generate_synthetic_world(cfg, seed=5)
    assert a == b
    c = generate_synthetic_world(cfg, seed=6)
    assert c[1].records != a[1].records


def test_generate_minimal_world():
    cfg = WorldConfig(n_users=1, n_items=1, n_attrs=1,
                      attrs_per_item=(1, 1), interactions_per_user=(1, 1))
    catalog, log = generate_synthetic_world(cfg, seed=0)
    assert log.records == ((0, 0),)
    assert catalog.item_attrs == ((0,),)


def test_generate_rejects_bad_ranges():
    with pytest.raises(ConfigError):
        generate_synthetic_world(WorldConfig(attrs_per_item=(5, 3)), seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_world(WorldConfig(n_attrs=4, attrs_per_item=(3, 6)), seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_world(WorldConfig(n_users=0), seed=0)


def test_split_sizes_follow_ratios():
    # 10 users x 10 records; global sizes must track 7:1.5:1.5 within a record
    records = tuple((u, i % 5) for u in range(10) for i in range(10))
    log = InteractionLog(records)
    split = split_interactions(log, (0.7, 0.15, 0.15), seed=1, n_users=10)
    assert abs(len(split.train) - 70) <= 1
    assert abs(len(split.valid) - 15) <= 1
    assert abs(len(split.test) - 15) <= 1


def test_split_degenerate_ratio():
    log = InteractionLog(tuple((0, i) for i in range(10)))
    split = split_interactions(log, (1.0, 0.0, 0.0), seed=1, n_users=1)
    assert split.train.records == log.records
    assert len(split.valid) == 0 and len(split.test) == 0


def test_split_small_user_goes_to_train():
    log = InteractionLog(((3, 1), (3, 2)))
    split = split_interactions(log, (0.7, 0.15, 0.15), seed=1, n_users=4)
    assert len(split.train) == 2 and len(split.valid) == 0 and len(split.test) == 0


def test_split_rejects_bad_ratios():
    log = InteractionLog(((0, 0),))
    with pytest.raises(ConfigError):
        split_interactions(log, (0.5, 0.4, 0.2), seed=1, n_users=1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 19)), max_size=60),
       st.integers(0, 2**32 - 1))
def test_split_conserves_multiset(pairs, seed):
    log = InteractionLog(tuple(pairs))
    split = split_interactions(log, (0.7, 0.15, 0.15), seed=seed, n_users=8)
    merged = Counter(split.train.records) + Counter(split.valid.records) + Counter(split.test.records)
    assert merged == Counter(log.records)


def test_split_per_user_keeps_history_for_test_users():
    cfg = WorldConfig(n_users=20, n_items=50, n_attrs=10)
    _, log = generate_synthetic_world(cfg, seed=3)
    split = split_interactions(log, (0.7, 0.15, 0.15), seed=4, n_users=20)
    train_users = {u for u, _ in split.train.records}
    for u, _ in split.test.records:
        assert u in train_users


def test_save_load_round_trip(tmp_path, tiny_world):
    catalog, log = tiny_world
    save_catalog(catalog, log, tmp_path / "c.json", tmp_path / "i.tsv")
    catalog2, log2 = load_catalog(tmp_path / "c.json", tmp_path / "i.tsv")
    assert catalog2 == catalog
    assert log2 == log


def test_load_rejects_dangling_attribute(tmp_path):
    (tmp_path / "c.json").write_text(
        '{"version":1,"n_users":1,"n_items":1,"n_attrs":10,"item_attrs":[[99]]}'
    )
    (tmp_path / "i.tsv").write_text("0\t0\n")
    with pytest.raises(CatalogLoadError, match="99"):
        load_catalog(tmp_path / "c.json", tmp_path / "i.tsv")


def test_load_rejects_empty_attr_list(tmp_path):
    (tmp_path / "c.json").write_text(
        '{"version":1,"n_users":1,"n_items":1,"n_attrs":2,"item_attrs":[[]]}'
    )
    (tmp_path / "i.tsv").write_text("")
    with pytest.raises(CatalogLoadError, match="no attributes"):
        load_catalog(tmp_path / "c.json", tmp_path / "i.tsv")


def test_load_names_bad_line(tmp_path):
    (tmp_path / "c.json").write_text(
        '{"version":1,"n_users":2,"n_items":2,"n_attrs":2,"item_attrs":[[0],[1]]}'
    )
    (tmp_path / "i.tsv").write_text("0\t0\n7\t1\n")
    with pytest.raises(CatalogLoadError, match=":2"):
        load_catalog(tmp_path / "c.json", tmp_path / "i.tsv")
