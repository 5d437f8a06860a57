"""Small synthetic interaction datasets for desk-scale checks."""
from __future__ import annotations

import numpy as np

from .data import Dataset


def planted_blocks(n_blocks: int = 4, users_per_block: int = 5, items_per_block: int = 5,
                   cross_per_user: int = 0, rng: np.random.Generator | None = None) -> Dataset:
    """Each user likes every item of its own block, plus ``cross_per_user`` random outside items."""
    n_users = n_blocks * users_per_block
    n_items = n_blocks * items_per_block
    lists = []
    for u in range(n_users):
        b = u // users_per_block
        own = np.arange(b * items_per_block, (b + 1) * items_per_block)
        if cross_per_user:
            if rng is None:
                raise ValueError("cross interactions need an rng")
            outside = np.setdiff1d(np.arange(n_items), own)
            own = np.concatenate([own, rng.choice(outside, size=cross_per_user, replace=False)])
        lists.append(np.sort(own))
    return Dataset(n_users, n_items, tuple(lists))


def long_tail(n_users: int = 200, n_items: int = 200, n_clusters: int = 8, mean_degree: int = 20,
              pop_exponent: float = 0.8, affinity: float = 3.0,
              rng: np.random.Generator | None = None) -> Dataset:
    """Clustered latent preferences times a Zipf-like item popularity.

    Each user draws a degree around ``mean_degree`` and samples that many
    distinct items with probability proportional to pop_i * exp(affinity * [same cluster]).
    """
    if rng is None:
        raise ValueError("long_tail needs an rng")
    pop = 1.0 / np.arange(1, n_items + 1) ** pop_exponent
    pop = pop[rng.permutation(n_items)]
    item_cluster = rng.integers(0, n_clusters, size=n_items)
    user_cluster = rng.integers(0, n_clusters, size=n_users)
    lists = []
    for u in range(n_users):
        k = int(np.clip(rng.poisson(mean_degree), 5, n_items // 2))
        logits = np.log(pop) + affinity * (item_cluster == user_cluster[u])
        # Gumbel top-k = sampling without replacement proportional to exp(logits)
        keys = logits + rng.gumbel(size=n_items)
        lists.append(np.sort(np.argpartition(-keys, k)[:k]))
    return Dataset(n_users, n_items, tuple(lists))
