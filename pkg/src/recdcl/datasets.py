"""Synthetic implicit-feedback corpora for tests, demos, and benchmarks.

Real retail/review datasets cannot ship with the package, so the generator
below produces a deterministic stand-in with the structure that matters:
skewed item popularity, a few thousand sparse users, and latent interest
groups that give personalized models something Pop cannot capture.
"""

from __future__ import annotations

import numpy as np

from recdcl.corpus import InteractionTable


def make_interactions(
    n_users: int = 1100,
    n_items: int = 2500,
    n_groups: int = 24,
    mean_per_user: float = 9.0,
    min_per_user: int = 5,
    within_group: float = 0.8,
    popularity_exponent: float = 0.7,
    seed: int = 0,
) -> InteractionTable:
    """Latent-group interaction table, all pairs labeled train.

    Each user belongs to one interest group and draws most interactions from
    that group's items; the rest come from the global catalog. Item draw
    probabilities follow a power law of exponent `popularity_exponent` over a
    random popularity ranking, so a Pop baseline is competitive but beatable.
    """
    if not 0.0 <= within_group <= 1.0:
        raise ValueError("within_group must be in [0, 1]")
    rng = np.random.default_rng([seed, 5])

    user_group = rng.integers(0, n_groups, size=n_users)
    item_group = rng.integers(0, n_groups, size=n_items)
    # popularity rank is a random permutation; weight ~ 1/(rank+1)^s
    ranks = rng.permutation(n_items)
    weights = 1.0 / (ranks + 1.0) ** popularity_exponent
    group_items = [np.flatnonzero(item_group == g) for g in range(n_groups)]
    # empty groups fall back to the global catalog
    all_items = np.arange(n_items)
    group_items = [g if len(g) >= 2 else all_items for g in group_items]
    global_p = weights / weights.sum()

    users_out: list[int] = []
    items_out: list[int] = []
    extra = mean_per_user - min_per_user
    for u in range(n_users):
        n_u = min_per_user + int(rng.poisson(max(extra, 0.0)))
        own = group_items[user_group[u]]
        own_p = weights[own] / weights[own].sum()
        n_in = int(rng.binomial(n_u, within_group))
        picks: set[int] = set()
        take_in = min(n_in, len(own))
        picks.update(rng.choice(own, size=take_in, replace=False, p=own_p).tolist())
        n_out = n_u - take_in
        if n_out > 0:
            picks.update(
                rng.choice(all_items, size=min(n_out, n_items), replace=False,
                           p=global_p).tolist()
            )
        for i in sorted(picks):
            users_out.append(u)
            items_out.append(i)

    users = np.asarray(users_out, dtype=np.int64)
    items = np.asarray(items_out, dtype=np.int64)
    # drop items nobody touched so ids stay dense
    used = np.unique(items)
    remap = np.full(n_items, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    items = remap[items]
    return InteractionTable(
        user_count=n_users,
        item_count=len(used),
        users=users,
        items=items,
        split=np.zeros(len(users), dtype=np.int8),
        user_tokens=[f"u{u}" for u in range(n_users)],
        item_tokens=[f"i{i}" for i in range(len(used))],
    )
