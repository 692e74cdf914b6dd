"""Seeded synthetic implicit-feedback data with clustered item tastes.

Items are split into ``num_clusters`` groups.  Each user draws a few favourite
groups and a heavy-tailed history length; every interaction comes from one of
the user's groups (popularity-skewed within the group) except for a fraction
of uniformly random "noise" clicks.  Timestamps are a random permutation, so
the held-out item is a random draw from the user's tastes.
"""
from __future__ import annotations

import numpy as np

from .data import Dataset, dataset_from_interactions


def clustered_interactions(
    num_users=600,
    num_items=800,
    num_clusters=40,
    clusters_per_user=(2, 5),
    mean_history=30,
    min_history=5,
    noise=0.15,
    popularity_skew=1.0,
    seed=0,
):
    """Return a list of ``(user, item, timestamp)`` triples."""
    rng = np.random.default_rng(seed)
    cluster_of = rng.permutation(np.arange(num_items) % num_clusters)
    members = [np.flatnonzero(cluster_of == c) for c in range(num_clusters)]
    pop = [rng.pareto(popularity_skew, size=len(m)) + 1.0 for m in members]
    pop = [w / w.sum() for w in pop]

    out = []
    for u in range(num_users):
        n_c = int(rng.integers(clusters_per_user[0], clusters_per_user[1] + 1))
        tastes = rng.choice(num_clusters, size=n_c, replace=False)
        taste_w = rng.dirichlet(np.ones(n_c))
        length = max(min_history, int(rng.lognormal(np.log(mean_history), 0.6)))
        capacity = sum(len(members[c]) for c in tastes)
        length = min(length, capacity)
        chosen = set()
        while len(chosen) < length:
            if rng.random() < noise:
                chosen.add(int(rng.integers(num_items)))
                continue
            c = tastes[rng.choice(n_c, p=taste_w)]
            chosen.add(int(rng.choice(members[c], p=pop[c])))
        items = np.array(sorted(chosen))
        stamps = rng.permutation(len(items))
        out.extend((u, int(i), int(t)) for i, t in zip(items, stamps))
    return out


def clustered_dataset(seed=0, **kwargs) -> Dataset:
    """Leave-one-out Dataset (with 99 evaluation negatives) from :func:`clustered_interactions`."""
    return dataset_from_interactions(clustered_interactions(seed=seed, **kwargs), seed=seed + 1)
