import numpy as np
import pytest

from recdcl import corpus

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"


@pytest.fixture
def toy_path():
    return f"{FIXTURES}/toy.tsv"


@pytest.fixture
def toy_table(toy_path):
    return corpus.ingest(toy_path)


@pytest.fixture
def toy_split(toy_table):
    return corpus.split(toy_table, seed=0)


def make_table(users, items, n_users=None, n_items=None, split=None):
    """Build an InteractionTable from raw id lists, all-train by default."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    n_users = n_users or int(users.max()) + 1
    n_items = n_items or int(items.max()) + 1
    if split is None:
        split = np.zeros(len(users), dtype=np.int8)
    return corpus.InteractionTable(
        user_count=n_users,
        item_count=n_items,
        users=users,
        items=items,
        split=np.asarray(split, dtype=np.int8),
        user_tokens=[f"u{i}" for i in range(n_users)],
        item_tokens=[f"i{i}" for i in range(n_items)],
    )
