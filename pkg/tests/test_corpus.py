"""Dataset assembly: ingestion determinism, splits, pairing, synthetic RLE."""

import numpy as np
import pytest

from bytesim import corpus


def make_tree(tmp_path, files: dict):
    for rel, data in files.items():
        p = tmp_path / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(data)
    return tmp_path


def test_ingest_skips_oversized_files(tmp_path):
    root = make_tree(tmp_path, {"small.bin": bytes(100), "big.bin": bytes(9000)})
    entries, examples, report = corpus.ingest_directory(root)
    assert report.ingested == 1 and report.skipped_oversize == 1
    assert entries[0].source_id == "small.bin"
    assert entries[0].length == 100


def test_ingest_labels_by_sorted_subdirectory(tmp_path):
    root = make_tree(
        tmp_path,
        {"yes/a.bin": b"aa", "no/b.bin": b"bb", "yes/c.bin": b"cc"},
    )
    entries, examples, report = corpus.ingest_directory(root, mode="label-by-subdirectory")
    assert report.label_names == ["no", "yes"]
    by_id = {e.source_id: e.label for e in entries}
    assert by_id == {"no/b.bin": 0, "yes/a.bin": 1, "yes/c.bin": 1}


def test_ingest_is_deterministic(tmp_path):
    root = make_tree(tmp_path, {f"f{i}.bin": bytes([i] * (i + 1)) for i in range(20)})
    a = corpus.ingest_directory(root)[0]
    b = corpus.ingest_directory(root)[0]
    assert [e.to_json() for e in a] == [e.to_json() for e in b]


def test_ingest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        corpus.ingest_directory(tmp_path / "missing")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ValueError):
        corpus.ingest_directory(empty)


def entries_of(n):
    return [
        corpus.ManifestEntry(source_id=f"e{i}", length=1, label=None, split=None, digest=str(i))
        for i in range(n)
    ]


def test_split_one_percent_of_hundred_is_one():
    entries = corpus.split(entries_of(100), 0.01, seed=0)
    tags = [e.split for e in entries]
    assert tags.count("eval") == 1 and tags.count("train") == 99


def test_split_is_seed_deterministic_and_seed_sensitive():
    a = [e.split for e in corpus.split(entries_of(200), 0.2, seed=5)]
    b = [e.split for e in corpus.split(entries_of(200), 0.2, seed=5)]
    c = [e.split for e in corpus.split(entries_of(200), 0.2, seed=6)]
    assert a == b
    assert a != c


def test_split_half_of_two():
    entries = corpus.split(entries_of(2), 0.5, seed=1)
    assert sorted(e.split for e in entries) == ["eval", "train"]


def test_split_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        corpus.split(entries_of(1), 0.5, seed=0)
    with pytest.raises(ValueError):
        corpus.split(entries_of(10), 0.0, seed=0)


def test_build_pair_dataset_matches_by_stem(tmp_path):
    make_tree(
        tmp_path,
        {
            "a/x.abc": b"one",
            "a/y.abc": b"two",
            "a/orphan.abc": b"three",
            "b/x.mid": b"ONE",
            "b/y.mid": b"TWO",
            "b/stray.mid": b"!!",
        },
    )
    pairs, report = corpus.build_pair_dataset(tmp_path / "a", tmp_path / "b")
    assert [p.source_id for p in pairs] == ["x", "y"]
    assert pairs[0].side_a == b"one" and pairs[0].side_b == b"ONE"
    assert report["unmatched_a"] == 1 and report["unmatched_b"] == 1


def test_build_pair_dataset_skips_capacity_violations(tmp_path):
    make_tree(tmp_path, {"a/x.abc": bytes(5000), "b/x.mid": bytes(5000), "a/ok.abc": b"z", "b/ok.mid": b"z"})
    pairs, report = corpus.build_pair_dataset(tmp_path / "a", tmp_path / "b", 16, 512)
    assert [p.source_id for p in pairs] == ["ok"]
    assert report["skipped_capacity"] == 1


def test_build_pair_dataset_requires_matches(tmp_path):
    make_tree(tmp_path, {"a/x.abc": b"1", "b/y.mid": b"2"})
    with pytest.raises(ValueError):
        corpus.build_pair_dataset(tmp_path / "a", tmp_path / "b")


def test_rle_documented_example():
    assert corpus.rle_encode(b"AAAAB") == bytes([65, 4, 66, 1])
    assert corpus.rle_decode(bytes([65, 4, 66, 1])) == b"AAAAB"


def test_rle_long_runs_split_at_255():
    data = b"x" * 600
    enc = corpus.rle_encode(data)
    assert enc == bytes([120, 255, 120, 255, 120, 90])
    assert corpus.rle_decode(enc) == data


def test_rle_rejects_malformed_streams():
    with pytest.raises(ValueError):
        corpus.rle_decode(b"\x41")
    with pytest.raises(ValueError):
        corpus.rle_decode(bytes([65, 0]))


def test_synthetic_pairs_invertible_and_deterministic():
    pairs = corpus.synthetic_pairs(50, seed=3)
    assert len(pairs) == 50
    for p in pairs:
        assert 16 <= len(p.side_a) <= 512
        assert all(corpus.PRINTABLE_LO <= b <= corpus.PRINTABLE_HI for b in p.side_a)
        assert corpus.rle_decode(p.side_b) == p.side_a
    again = corpus.synthetic_pairs(50, seed=3)
    assert [p.side_a for p in again] == [p.side_a for p in pairs]
    other = corpus.synthetic_pairs(50, seed=4)
    assert [p.side_a for p in other] != [p.side_a for p in pairs]
