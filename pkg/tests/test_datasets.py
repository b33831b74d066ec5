"""Interaction parsing, k-core filtering, splitting, and the binary feature
format."""

import struct

import numpy as np
import pytest

from monet.datasets import (
    MMFV_MAGIC,
    MMFV_VERSION,
    MODALITIES,
    RawInteraction,
    _split_counts,
    kcore_filter,
    load_features,
    load_interactions,
    read_mmfv_block,
    read_prepared,
    split_dataset,
    write_features,
    write_mmfv_block,
    write_prepared,
)
from monet.errors import ConfigError, DataError, FeatureFileError, ParseError


def _write(tmp_path, text, name="inter.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# load_interactions


def test_load_skips_comments_blanks_and_dedups(tmp_path):
    path = _write(
        tmp_path,
        "# header comment\n"
        "u1\ti1\t100\n"
        "\n"
        "u1\ti2\n"
        "u1\ti1\t999\n"      # duplicate pair, first occurrence wins
        "u2\ti1\n",
    )
    rows = load_interactions(path)
    assert rows == [
        RawInteraction("u1", "i1", 100),
        RawInteraction("u1", "i2", None),
        RawInteraction("u2", "i1", None),
    ]


def test_load_preserves_file_order(tmp_path):
    path = _write(tmp_path, "b\tz\na\ty\nc\tx\n")
    rows = load_interactions(path)
    assert [r.user_raw_id for r in rows] == ["b", "a", "c"]


def test_load_bad_field_count(tmp_path):
    path = _write(tmp_path, "u1\ti1\nu2\ti2\t3\t4\n")
    with pytest.raises(ParseError, match="line 2: expected 2 or 3 tab-separated fields, got 4"):
        load_interactions(path)


def test_load_single_field_line(tmp_path):
    path = _write(tmp_path, "lonely\n")
    with pytest.raises(ParseError, match="expected 2 or 3"):
        load_interactions(path)


def test_load_empty_ids(tmp_path):
    path = _write(tmp_path, "u1\t\n")
    with pytest.raises(ParseError, match="line 1: empty user or item id"):
        load_interactions(path)


def test_load_bad_timestamp(tmp_path):
    path = _write(tmp_path, "u1\ti1\tlast-tuesday\n")
    with pytest.raises(ParseError, match="bad timestamp 'last-tuesday'"):
        load_interactions(path)


def test_load_empty_file(tmp_path):
    path = _write(tmp_path, "# only comments\n\n")
    with pytest.raises(ParseError, match="no interactions in"):
        load_interactions(path)


def test_parse_error_records_line_number(tmp_path):
    path = _write(tmp_path, "fine\tpair\nbroken\n")
    with pytest.raises(ParseError) as exc_info:
        load_interactions(path)
    assert exc_info.value.line_no == 2
    assert exc_info.value.category == "data"


# ---------------------------------------------------------------------------
# kcore_filter


def _pairs(raw_pairs):
    return [RawInteraction(u, i) for u, i in raw_pairs]


def test_kcore_hand_example():
    # u3/i3 hang off the dense block by single edges; only the 2x2 block survives k=2
    rows = _pairs([("u1", "i1"), ("u1", "i2"), ("u2", "i1"), ("u2", "i2"), ("u3", "i1"), ("u1", "i3")])
    kept = kcore_filter(rows, 2)
    assert [(r.user_raw_id, r.item_raw_id) for r in kept] == [
        ("u1", "i1"), ("u1", "i2"), ("u2", "i1"), ("u2", "i2"),
    ]


def test_kcore_cascading_removal():
    # removing i2 (degree 1) drops u2 below k, which then drops i1 below k
    rows = _pairs([("u1", "i1"), ("u1", "i3"), ("u3", "i3"), ("u3", "i1"),
                   ("u2", "i1"), ("u2", "i2")])
    kept = kcore_filter(rows, 2)
    assert {(r.user_raw_id, r.item_raw_id) for r in kept} == {
        ("u1", "i1"), ("u1", "i3"), ("u3", "i3"), ("u3", "i1"),
    }


def test_kcore_k1_keeps_everything_and_dedups():
    rows = _pairs([("a", "x"), ("a", "x"), ("b", "y")])
    kept = kcore_filter(rows, 1)
    assert [(r.user_raw_id, r.item_raw_id) for r in kept] == [("a", "x"), ("b", "y")]


def test_kcore_empty_result():
    rows = _pairs([("a", "x"), ("b", "y")])
    with pytest.raises(DataError, match="k-core is empty"):
        kcore_filter(rows, 2)


def test_kcore_invalid_k():
    with pytest.raises(ConfigError, match="k-core parameter must be >= 1, got 0"):
        kcore_filter(_pairs([("a", "x")]), 0)


def _brute_force_kcore(pairs, k):
    pairs = list(dict.fromkeys(pairs))
    while True:
        from collections import Counter

        ud = Counter(u for u, _ in pairs)
        it = Counter(i for _, i in pairs)
        kept = [(u, i) for u, i in pairs if ud[u] >= k and it[i] >= k]
        if len(kept) == len(pairs):
            return kept
        pairs = kept


def test_kcore_matches_brute_force_on_random_graphs():
    rng = np.random.default_rng(42)
    for trial in range(30):
        n_edges = int(rng.integers(5, 40))
        raw = {(f"u{rng.integers(8)}", f"i{rng.integers(8)}") for _ in range(n_edges)}
        pairs = sorted(raw)
        k = int(rng.integers(1, 4))
        expected = _brute_force_kcore(pairs, k)
        if not expected:
            with pytest.raises(DataError):
                kcore_filter(_pairs(pairs), k)
            continue
        kept = kcore_filter(_pairs(pairs), k)
        assert [(r.user_raw_id, r.item_raw_id) for r in kept] == expected


# ---------------------------------------------------------------------------
# split sizing and split_dataset


@pytest.mark.parametrize(
    "n,expected",
    [
        (1, (1, 0, 0)),
        (2, (1, 0, 1)),
        (3, (2, 0, 1)),
        (5, (4, 0, 1)),
        (10, (8, 1, 1)),
        (20, (16, 2, 2)),
        (100, (80, 10, 10)),
    ],
)
def test_split_counts_default_ratios(n, expected):
    assert _split_counts(n, (0.8, 0.1, 0.1)) == expected


def test_split_counts_custom_ratios():
    assert _split_counts(4, (0.5, 0.25, 0.25)) == (2, 1, 1)
    assert _split_counts(1, (0.5, 0.25, 0.25)) == (1, 0, 0)


def test_split_ratios_must_sum_to_one():
    with pytest.raises(ConfigError, match="split ratios must sum to 1"):
        split_dataset(_pairs([("a", "x")]), ratios=(0.8, 0.1, 0.2))


def test_split_empty_log():
    with pytest.raises(DataError, match="cannot split an empty interaction log"):
        split_dataset([])


def test_split_id_maps_sorted_by_raw_id():
    ds = split_dataset(_pairs([("zed", "q"), ("amy", "p"), ("amy", "q")]))
    assert ds.user_id_map == {"amy": 0, "zed": 1}
    assert ds.item_id_map == {"p": 0, "q": 1}


def _random_log(rng, num_users, num_items, per_user_lo, per_user_hi):
    rows = []
    for u in range(num_users):
        count = int(rng.integers(per_user_lo, per_user_hi + 1))
        items = rng.choice(num_items, size=min(count, num_items), replace=False)
        rows.extend((f"u{u:03d}", f"i{i:03d}") for i in items)
    return _pairs(rows)


def test_split_partitions_the_log_exactly():
    rng = np.random.default_rng(5)
    for trial in range(10):
        log = _random_log(rng, 12, 15, 1, 12)
        ds = split_dataset(log, seed=trial)
        everything = np.concatenate([ds.train, ds.validation, ds.test])
        as_set = {(int(u), int(i)) for u, i in everything}
        assert len(as_set) == everything.shape[0]  # disjoint
        expected = {
            (ds.user_id_map[r.user_raw_id], ds.item_id_map[r.item_raw_id]) for r in log
        }
        assert as_set == expected


def test_split_every_user_and_item_lands_in_train():
    rng = np.random.default_rng(9)
    for trial in range(10):
        log = _random_log(rng, 10, 12, 1, 10)
        ds = split_dataset(log, seed=trial)
        assert set(np.unique(ds.train[:, 0])) == set(range(ds.num_users))
        assert set(np.unique(ds.train[:, 1])) == set(range(ds.num_items))


def test_split_cold_item_repair_two_user_overlap():
    # both users hold the same five items, so without repair a seed could
    # leave some item entirely in the held-out parts
    items = [f"i{i}" for i in range(5)]
    log = _pairs([(u, i) for u in ("a", "b") for i in items])
    for seed in range(20):
        ds = split_dataset(log, seed=seed)
        assert set(np.unique(ds.train[:, 1])) == set(range(5))
        per_user = {u: 0 for u in range(2)}
        for u, _ in ds.train:
            per_user[int(u)] += 1
        assert all(c >= 1 for c in per_user.values())


def test_split_single_user_places_all_in_train():
    # with one user every item occurs once, so repair pulls everything back
    log = _pairs([("solo", f"i{i}") for i in range(6)])
    ds = split_dataset(log, seed=3)
    assert ds.train.shape[0] == 6
    assert ds.validation.shape[0] == 0 and ds.test.shape[0] == 0


def test_split_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(77)
    log = _random_log(rng, 15, 20, 4, 15)
    a = split_dataset(log, seed=4)
    b = split_dataset(log, seed=4)
    assert np.array_equal(a.train, b.train)
    assert np.array_equal(a.validation, b.validation)
    assert np.array_equal(a.test, b.test)
    c = split_dataset(log, seed=5)
    same = (
        np.array_equal(a.train, c.train)
        and np.array_equal(a.validation, c.validation)
        and np.array_equal(a.test, c.test)
    )
    assert not same


def test_positives_by_user_partitions():
    log = _pairs([("a", "x"), ("a", "y"), ("a", "z"), ("b", "x"), ("b", "y"), ("b", "z")])
    ds = split_dataset(log, seed=0)
    alltogether = ds.positives_by_user("all")
    parts = [ds.positives_by_user(p) for p in ("train", "validation", "test")]
    for u in alltogether:
        merged = set()
        for p in parts:
            merged |= p.get(u, set())
        assert merged == alltogether[u]


# ---------------------------------------------------------------------------
# MMFV binary format


def test_mmfv_frozen_layout(tmp_path):
    values = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
    path = tmp_path / "m.mmfv"
    write_features(path, values)
    expected = MMFV_MAGIC + struct.pack("<HII", MMFV_VERSION, 2, 3) + struct.pack("<6f", 1, 2, 3, 4, 5, 6)
    assert path.read_bytes() == expected


def test_mmfv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.normal(size=(7, 11)).astype(np.float32)
    values[0, 0] = -0.0
    values[1, 1] = np.float32(1e-40)  # subnormal survives
    path = tmp_path / "m.mmfv"
    write_features(path, values)
    with open(path, "rb") as fh:
        back = read_mmfv_block(fh)
    assert back.dtype == np.float32
    assert back.tobytes() == values.tobytes()


def test_mmfv_one_dimensional_writes_single_row(tmp_path):
    path = tmp_path / "v.mmfv"
    write_features(path, np.arange(4, dtype=np.float32))
    with open(path, "rb") as fh:
        back = read_mmfv_block(fh)
    assert back.shape == (1, 4)


def test_mmfv_rejects_3d():
    import io

    with pytest.raises(ValueError, match="MMFV blocks are 2-D"):
        write_mmfv_block(io.BytesIO(), np.zeros((2, 2, 2), dtype=np.float32))


def test_mmfv_bad_magic(tmp_path):
    import io

    with pytest.raises(FeatureFileError, match=r"vis: bad magic b'JUNK', expected b'MMFV'"):
        read_mmfv_block(io.BytesIO(b"JUNKxxxx"), name="vis")


def test_mmfv_truncated_header():
    import io

    with pytest.raises(FeatureFileError, match="truncated header"):
        read_mmfv_block(io.BytesIO(MMFV_MAGIC + b"\x01\x00"))


def test_mmfv_unsupported_version():
    import io

    blob = MMFV_MAGIC + struct.pack("<HII", 9, 1, 1) + struct.pack("<f", 0.5)
    with pytest.raises(FeatureFileError, match="unsupported version 9"):
        read_mmfv_block(io.BytesIO(blob))


def test_mmfv_truncated_payload():
    import io

    blob = MMFV_MAGIC + struct.pack("<HII", MMFV_VERSION, 2, 2) + struct.pack("<f", 1.0)
    with pytest.raises(FeatureFileError, match="truncated payload, expected 16 bytes, got 4"):
        read_mmfv_block(io.BytesIO(blob))


# ---------------------------------------------------------------------------
# load_features validation


def test_load_features_metadata(tmp_path):
    values = np.ones((3, 4), dtype=np.float32)
    path = tmp_path / "t.mmfv"
    write_features(path, values)
    feat = load_features(path, expected_items=3, modality="visual")
    assert feat.modality == "visual"
    assert feat.num_items == 3 and feat.dim == 4
    assert np.array_equal(feat.values, values)


def test_load_features_trailing_bytes(tmp_path):
    path = tmp_path / "t.mmfv"
    write_features(path, np.ones((2, 2), dtype=np.float32))
    with open(path, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(FeatureFileError, match="trailing bytes after matrix payload"):
        load_features(path, expected_items=2)


def test_load_features_row_count_mismatch(tmp_path):
    path = tmp_path / "t.mmfv"
    write_features(path, np.ones((2, 2), dtype=np.float32))
    with pytest.raises(FeatureFileError, match="has 2 rows but the dataset holds 5 items"):
        load_features(path, expected_items=5)


def test_load_features_non_finite(tmp_path):
    values = np.ones((3, 2), dtype=np.float32)
    values[1, 0] = np.nan
    path = tmp_path / "t.mmfv"
    write_features(path, values)
    with pytest.raises(FeatureFileError, match="non-finite entries in row for item 1"):
        load_features(path, expected_items=3)


def test_load_features_all_zero_row(tmp_path):
    values = np.ones((3, 2), dtype=np.float32)
    values[2] = 0.0
    path = tmp_path / "t.mmfv"
    write_features(path, values)
    with pytest.raises(FeatureFileError, match="all-zero feature row for item 2"):
        load_features(path, expected_items=3)


# ---------------------------------------------------------------------------
# prepared-artifact round trip


def test_prepared_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    log = _random_log(rng, 8, 10, 2, 8)
    ds = split_dataset(log, seed=1)
    out = tmp_path / "prep"
    paths = write_prepared(out, ds)
    assert sorted(p.split("/")[-1] for p in map(str, paths)) == [
        "item_ids.tsv", "test.tsv", "train.tsv", "user_ids.tsv", "val.tsv",
    ]
    back = read_prepared(out)
    assert back.num_users == ds.num_users and back.num_items == ds.num_items
    assert back.user_id_map == ds.user_id_map
    assert back.item_id_map == ds.item_id_map
    assert np.array_equal(back.train, ds.train)
    assert np.array_equal(back.validation, ds.validation)
    assert np.array_equal(back.test, ds.test)


def test_prepared_rewrite_is_byte_identical(tmp_path):
    rng = np.random.default_rng(4)
    log = _random_log(rng, 6, 8, 2, 6)
    ds = split_dataset(log, seed=2)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    write_prepared(out_a, ds)
    write_prepared(out_b, ds)
    for name in ("user_ids.tsv", "item_ids.tsv", "train.tsv", "val.tsv", "test.tsv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_modalities_constant():
    assert MODALITIES == ("textual", "visual")
