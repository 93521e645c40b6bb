"""Implicit-feedback interaction corpus: TSV ingest, per-user splits, batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "valid": VALID, "test": TEST}


class CorpusError(ValueError):
    """Malformed interaction data or an invalid corpus operation."""


@dataclass
class InteractionTable:
    """Deduplicated (user, item) pairs with dense ids and a split label per pair.

    Ids are assigned in first-seen order, so the table is a pure function of
    the input line sequence. ``split`` holds TRAIN/VALID/TEST codes; a freshly
    ingested table is all-train.
    """

    user_count: int
    item_count: int
    users: np.ndarray  # (n,) int64
    items: np.ndarray  # (n,) int64
    split: np.ndarray  # (n,) int8
    user_tokens: list[str] = field(default_factory=list)
    item_tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int8)
        if not (len(self.users) == len(self.items) == len(self.split)):
            raise CorpusError("users, items and split must have equal length")
        if len(self.users) and (self.users.min() < 0 or self.users.max() >= self.user_count):
            raise CorpusError("user id out of range")
        if len(self.items) and (self.items.min() < 0 or self.items.max() >= self.item_count):
            raise CorpusError("item id out of range")
        if len(self.split) and not np.isin(self.split, [TRAIN, VALID, TEST]).all():
            raise CorpusError("split labels must be 0, 1 or 2")

    @property
    def n_pairs(self) -> int:
        return len(self.users)

    def pairs_of(self, split: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.split == split
        return self.users[mask], self.items[mask]

    def items_by_user(self, split: int) -> list[np.ndarray]:
        """Item-id array per user for one split (empty arrays where none)."""
        users, items = self.pairs_of(split)
        out: list[list[int]] = [[] for _ in range(self.user_count)]
        for u, i in zip(users.tolist(), items.tolist()):
            out[u].append(i)
        return [np.asarray(lst, dtype=np.int64) for lst in out]

    def counts(self) -> dict[str, int]:
        return {
            "users": self.user_count,
            "items": self.item_count,
            "pairs": self.n_pairs,
            "train": int((self.split == TRAIN).sum()),
            "valid": int((self.split == VALID).sum()),
            "test": int((self.split == TEST).sum()),
        }


@dataclass
class Batch:
    """One minibatch of aligned (user, item) training pairs."""

    users: np.ndarray
    items: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


def ingest(path: str | Path) -> InteractionTable:
    """Parse a TSV of ``user_token<TAB>item_token[<TAB>timestamp]`` lines.

    Duplicate (user, item) pairs collapse to the first occurrence. Raises
    CorpusError with the 1-based line number for malformed lines, and for
    files that yield no pairs at all.
    """
    path = Path(path)
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users: list[int] = []
    items: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
                raise CorpusError(f"line {lineno}: expected user<TAB>item[<TAB>timestamp], got {line!r}")
            u = user_ids.setdefault(fields[0], len(user_ids))
            i = item_ids.setdefault(fields[1], len(item_ids))
            if (u, i) in seen:
                continue
            seen.add((u, i))
            users.append(u)
            items.append(i)
    if not users:
        raise CorpusError(f"{path}: empty corpus, no interaction pairs found")
    return InteractionTable(
        user_count=len(user_ids),
        item_count=len(item_ids),
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        split=np.zeros(len(users), dtype=np.int8),
        user_tokens=list(user_ids),
        item_tokens=list(item_ids),
    )


def split(
    table: InteractionTable,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> InteractionTable:
    """Assign per-user train/valid/test labels.

    Per-user counts use floor rounding with a minimum of one held-out pair
    each for valid and test once a user has at least 3 interactions; users
    below that keep everything in train. The random partition of each user's
    pairs is drawn from a user-local stream, so relabeling one user never
    moves another user's pairs.
    """
    r_train, r_valid, r_test = ratios
    if min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    if r_train <= 0:
        raise CorpusError("train ratio must be positive")

    new_split = np.zeros(table.n_pairs, dtype=np.int8)
    order = np.argsort(table.users, kind="stable")
    bounds = np.searchsorted(table.users[order], np.arange(table.user_count + 1))
    for uid in range(table.user_count):
        idx = order[bounds[uid] : bounds[uid + 1]]
        n = len(idx)
        if n < 3:
            continue
        n_test = max(1, int(n * r_test)) if r_test > 0 else 0
        n_valid = max(1, int(n * r_valid)) if r_valid > 0 else 0
        # pathological ratio vectors could otherwise empty the train share
        while n - n_test - n_valid < 1:
            if n_valid > 0:
                n_valid -= 1
            else:
                n_test -= 1
        rng = np.random.default_rng([seed, 1, uid])
        perm = idx[rng.permutation(n)]
        new_split[perm[:n_test]] = TEST
        new_split[perm[n_test : n_test + n_valid]] = VALID
    return InteractionTable(
        user_count=table.user_count,
        item_count=table.item_count,
        users=table.users.copy(),
        items=table.items.copy(),
        split=new_split,
        user_tokens=list(table.user_tokens),
        item_tokens=list(table.item_tokens),
    )


def batches(
    table: InteractionTable, batch_size: int, seed: int = 0, epoch: int = 0
) -> Iterator[Batch]:
    """Shuffled minibatches over the train pairs for one epoch.

    The shuffle stream is keyed by (seed, epoch): the same epoch replays
    identically, different epochs reshuffle.
    """
    if batch_size < 2:
        raise CorpusError("batch_size must be >= 2")
    mask = np.flatnonzero(table.split == TRAIN)
    if len(mask) == 0:
        raise CorpusError("no train pairs to batch")
    rng = np.random.default_rng([seed, 2, epoch])
    perm = mask[rng.permutation(len(mask))]
    for start in range(0, len(perm), batch_size):
        chunk = perm[start : start + batch_size]
        yield Batch(users=table.users[chunk].copy(), items=table.items[chunk].copy())


def write_manifest(table: InteractionTable, path: str | Path) -> None:
    """Write ``user<TAB>item<TAB>split`` lines (dense ids, split in {0,1,2})."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for u, i, s in zip(table.users.tolist(), table.items.tolist(), table.split.tolist()):
            fh.write(f"{u}\t{i}\t{s}\n")


def read_manifest(path: str | Path) -> InteractionTable:
    """Read a split manifest back into a table. Ids must be dense already."""
    path = Path(path)
    users: list[int] = []
    items: list[int] = []
    labels: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise CorpusError(f"line {lineno}: expected user<TAB>item<TAB>split, got {line!r}")
            try:
                u, i, s = int(fields[0]), int(fields[1]), int(fields[2])
            except ValueError as exc:
                raise CorpusError(f"line {lineno}: non-integer field in {line!r}") from exc
            if s not in (TRAIN, VALID, TEST):
                raise CorpusError(f"line {lineno}: split label must be 0, 1 or 2, got {s}")
            users.append(u)
            items.append(i)
            labels.append(s)
    if not users:
        raise CorpusError(f"{path}: empty manifest")
    n_users = max(users) + 1
    n_items = max(items) + 1
    return InteractionTable(
        user_count=n_users,
        item_count=n_items,
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        split=np.asarray(labels, dtype=np.int8),
        user_tokens=[str(u) for u in range(n_users)],
        item_tokens=[str(i) for i in range(n_items)],
    )


def write_tsv(table: InteractionTable, path: str | Path) -> None:
    """Serialize pairs as raw token TSV, in table order (re-ingestable)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for u, i in zip(table.users.tolist(), table.items.tolist()):
            fh.write(f"{table.user_tokens[u]}\t{table.item_tokens[i]}\n")


def looks_like_manifest(path: str | Path) -> bool:
    """Heuristic: every non-blank line has 3 integer fields with split in {0,1,2}."""
    try:
        with Path(path).open("r", encoding="utf-8") as fh:
            saw_any = False
            for raw in fh:
                line = raw.strip()
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    return False
                try:
                    int(fields[0]), int(fields[1])
                    s = int(fields[2])
                except ValueError:
                    return False
                if s not in (TRAIN, VALID, TEST):
                    return False
                saw_any = True
            return saw_any
    except OSError:
        return False
