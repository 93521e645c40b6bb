"""Ingest, split and batching behavior."""

import numpy as np
import pytest

from recdcl import corpus
from recdcl.corpus import CorpusError

from conftest import make_table


# ---------------------------------------------------------------------------
# ingest


def test_ingest_toy(toy_table):
    assert toy_table.user_count == 6
    assert toy_table.item_count == 10
    assert toy_table.n_pairs == 23
    assert (toy_table.split == corpus.TRAIN).all()
    assert toy_table.user_tokens[0] == "u0"
    assert toy_table.item_tokens[0] == "i0"


def test_ingest_first_seen_ids(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("bob\tbook\nalice\tlamp\nbob\tlamp\n")
    t = corpus.ingest(p)
    assert t.user_tokens == ["bob", "alice"]
    assert t.item_tokens == ["book", "lamp"]
    assert t.users.tolist() == [0, 1, 0]
    assert t.items.tolist() == [0, 1, 1]


def test_ingest_dedup_first_wins(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\tx\na\tx\nb\ty\na\tx\n")
    t = corpus.ingest(p)
    assert t.n_pairs == 2


def test_ingest_allows_timestamp_column_and_blank_lines(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\tx\t123456\n\n   \nb\ty\n")
    t = corpus.ingest(p)
    assert t.n_pairs == 2


def test_ingest_rejects_malformed_line_with_lineno(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\tx\nonly-one-field\n")
    with pytest.raises(CorpusError, match="line 2"):
        corpus.ingest(p)


def test_ingest_rejects_empty_field(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("a\t\n")
    with pytest.raises(CorpusError, match="line 1"):
        corpus.ingest(p)


def test_ingest_rejects_empty_file(tmp_path):
    p = tmp_path / "x.tsv"
    p.write_text("\n\n")
    with pytest.raises(CorpusError, match="empty"):
        corpus.ingest(p)


def test_table_validates_ranges():
    with pytest.raises(CorpusError):
        make_table([0, 5], [0, 1], n_users=2, n_items=2)
    with pytest.raises(CorpusError):
        make_table([0, 1], [0, 1], split=[0, 7])


# ---------------------------------------------------------------------------
# split


def test_split_default_ratios(toy_table):
    t = corpus.split(toy_table, seed=0)
    # every toy user has >= 3 pairs, so exactly one test and one valid each
    for uid in range(t.user_count):
        mask = t.users == uid
        labels = t.split[mask]
        assert (labels == corpus.TEST).sum() == 1
        assert (labels == corpus.VALID).sum() == 1
        assert (labels == corpus.TRAIN).sum() == mask.sum() - 2


def test_split_worked_example_counts():
    # 10 pairs at (0.8, 0.1, 0.1) -> 8 train, 1 valid, 1 test
    t = make_table([0] * 10, list(range(10)))
    s = corpus.split(t, seed=1)
    c = s.counts()
    assert (c["train"], c["valid"], c["test"]) == (8, 1, 1)


def test_split_small_users_stay_train():
    t = make_table([0, 0, 1, 1, 1], [0, 1, 0, 1, 2])
    s = corpus.split(t, seed=0)
    # user 0 has 2 pairs: all train; user 1 has 3: one each held out
    assert (s.split[s.users == 0] == corpus.TRAIN).all()
    assert (s.split[s.users == 1] == corpus.TEST).sum() == 1
    assert (s.split[s.users == 1] == corpus.VALID).sum() == 1


def test_split_no_valid_share():
    t = make_table([0] * 10, list(range(10)))
    s = corpus.split(t, ratios=(0.9, 0.0, 0.1), seed=0)
    c = s.counts()
    assert c["valid"] == 0
    assert c["test"] == 1


def test_split_keeps_train_nonempty_under_extreme_ratios():
    t = make_table([0, 0, 0], [0, 1, 2])
    s = corpus.split(t, ratios=(0.02, 0.49, 0.49), seed=0)
    assert (s.split == corpus.TRAIN).sum() >= 1


def test_split_rejects_bad_ratios(toy_table):
    with pytest.raises(CorpusError):
        corpus.split(toy_table, ratios=(0.5, 0.2, 0.2))
    with pytest.raises(CorpusError):
        corpus.split(toy_table, ratios=(0.0, 0.5, 0.5))


def test_split_deterministic(toy_table):
    a = corpus.split(toy_table, seed=3)
    b = corpus.split(toy_table, seed=3)
    assert (a.split == b.split).all()
    c = corpus.split(toy_table, seed=4)
    assert (a.split != c.split).any()


def test_split_user_locality(toy_table):
    """Dropping one user's pairs must not move any other user's labels."""
    full = corpus.split(toy_table, seed=0)
    keep = toy_table.users != 2
    sub = make_table(
        toy_table.users[keep],
        toy_table.items[keep],
        n_users=toy_table.user_count,
        n_items=toy_table.item_count,
    )
    part = corpus.split(sub, seed=0)
    for uid in range(toy_table.user_count):
        if uid == 2:
            continue
        a = sorted(
            zip(
                full.items[(full.users == uid)].tolist(),
                full.split[(full.users == uid)].tolist(),
            )
        )
        b = sorted(
            zip(
                part.items[(part.users == uid)].tolist(),
                part.split[(part.users == uid)].tolist(),
            )
        )
        assert a == b


def test_split_does_not_mutate_input(toy_table):
    before = toy_table.split.copy()
    corpus.split(toy_table, seed=0)
    assert (toy_table.split == before).all()


# ---------------------------------------------------------------------------
# batches


def test_batches_cover_train_exactly_once(toy_split):
    got = []
    for b in corpus.batches(toy_split, batch_size=4, seed=0, epoch=0):
        got.extend(zip(b.users.tolist(), b.items.tolist()))
    tu, ti = toy_split.pairs_of(corpus.TRAIN)
    want = list(zip(tu.tolist(), ti.tolist()))
    assert sorted(got) == sorted(want)


def test_batches_epoch_reshuffles(toy_split):
    first = [b.users.tolist() for b in corpus.batches(toy_split, 4, seed=0, epoch=0)]
    again = [b.users.tolist() for b in corpus.batches(toy_split, 4, seed=0, epoch=0)]
    other = [b.users.tolist() for b in corpus.batches(toy_split, 4, seed=0, epoch=1)]
    assert first == again
    assert first != other


def test_batches_rejects_tiny_batch(toy_split):
    with pytest.raises(CorpusError):
        list(corpus.batches(toy_split, batch_size=1))


def test_batches_requires_train_pairs():
    t = make_table([0, 0, 1], [0, 1, 1], split=[2, 2, 2])
    with pytest.raises(CorpusError):
        list(corpus.batches(t, batch_size=2))


# ---------------------------------------------------------------------------
# manifests


def test_manifest_roundtrip(tmp_path, toy_split):
    p = tmp_path / "m.tsv"
    corpus.write_manifest(toy_split, p)
    back = corpus.read_manifest(p)
    assert back.user_count == toy_split.user_count
    assert back.item_count == toy_split.item_count
    assert (back.users == toy_split.users).all()
    assert (back.items == toy_split.items).all()
    assert (back.split == toy_split.split).all()


def test_manifest_detection(tmp_path, toy_split, toy_path):
    p = tmp_path / "m.tsv"
    corpus.write_manifest(toy_split, p)
    assert corpus.looks_like_manifest(p)
    assert not corpus.looks_like_manifest(toy_path)
    assert not corpus.looks_like_manifest(tmp_path / "missing.tsv")


def test_write_tsv_reingests(tmp_path, toy_table):
    p = tmp_path / "again.tsv"
    corpus.write_tsv(toy_table, p)
    back = corpus.ingest(p)
    assert (back.users == toy_table.users).all()
    assert (back.items == toy_table.items).all()
    assert back.user_tokens == toy_table.user_tokens


def test_read_manifest_rejects_bad_label(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("0\t0\t5\n")
    with pytest.raises(CorpusError, match="line 1"):
        corpus.read_manifest(p)
