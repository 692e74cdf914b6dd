"""Implicit-feedback datasets in the NCF processed layout.

A dataset is three files sharing a prefix:

``<prefix>.train.rating``
    ``user<TAB>item<TAB>rating<TAB>timestamp`` per line.
``<prefix>.test.rating``
    Same layout, exactly one line per user (the held-out interaction).
``<prefix>.test.negative``
    ``(user,item)`` followed by 99 tab-separated item ids per line.

Ratings are read and discarded; every observed interaction is a positive.
"""
from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

NUM_EVAL_NEGATIVES = 99


class DataFormatError(ValueError):
    """A dataset file line could not be parsed."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class ConsistencyError(ValueError):
    """Dataset files parse but contradict each other."""


class SamplingError(ValueError):
    """Negative sampling is impossible for some user."""


@dataclass(frozen=True)
class Dataset:
    """User histories plus the held-out test pairs and their stored negatives.

    ``histories[u]`` is the ordered int64 array of items user ``u`` interacted
    with in training.  ``test_pairs`` and ``eval_negatives`` are aligned lists,
    one entry per evaluated user.
    """

    num_users: int
    num_items: int
    histories: list
    test_pairs: list = field(default_factory=list)
    eval_negatives: list = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "_sets", None)

    @property
    def num_train_interactions(self) -> int:
        return int(sum(len(h) for h in self.histories))

    @property
    def num_interactions(self) -> int:
        return self.num_train_interactions + len(self.test_pairs)

    def history_set(self, user: int) -> frozenset:
        if self._sets is None:
            object.__setattr__(
                self, "_sets", [frozenset(h.tolist()) for h in self.histories]
            )
        return self._sets[user]

    def validate(self) -> None:
        """Raise ConsistencyError if any dataset invariant is violated."""
        U, I = self.num_users, self.num_items
        if len(self.histories) != U:
            raise ConsistencyError(f"expected {U} histories, got {len(self.histories)}")
        for u, hist in enumerate(self.histories):
            if len(hist) and (hist.min() < 0 or hist.max() >= I):
                raise ConsistencyError(f"user {u}: history item out of range [0, {I})")
            if len(np.unique(hist)) != len(hist):
                raise ConsistencyError(f"user {u}: duplicate items in history")
        if self.eval_negatives and len(self.eval_negatives) != len(self.test_pairs):
            raise ConsistencyError("eval_negatives not aligned with test_pairs")
        for idx, (u, i) in enumerate(self.test_pairs):
            if not 0 <= u < U or not 0 <= i < I:
                raise ConsistencyError(f"test pair ({u},{i}) out of range")
            seen = self.history_set(u)
            if not seen:
                raise ConsistencyError(f"test user {u} has no training history")
            if i in seen:
                raise ConsistencyError(f"test item {i} appears in history of user {u}")
            if self.eval_negatives:
                negs = self.eval_negatives[idx]
                if len(negs) != NUM_EVAL_NEGATIVES:
                    raise ConsistencyError(
                        f"user {u}: expected {NUM_EVAL_NEGATIVES} negatives, got {len(negs)}"
                    )
                if negs.min() < 0 or negs.max() >= I:
                    raise ConsistencyError(f"user {u}: negative item out of range")
                bad = [int(j) for j in negs if j == i or int(j) in seen]
                if bad:
                    raise ConsistencyError(
                        f"user {u}: evaluation negatives {bad[:5]} collide with positives"
                    )

    def subsample_users(self, fraction: float, seed: int) -> "Dataset":
        """Keep a seeded uniform fraction of the evaluated users, renumbered densely.

        Item ids are left untouched so embeddings stay comparable.
        """
        rng = np.random.default_rng(seed)
        users = np.array(sorted({u for u, _ in self.test_pairs}), dtype=np.int64)
        n = max(1, int(round(fraction * len(users))))
        keep = np.sort(rng.choice(users, size=n, replace=False))
        new_id = {int(u): k for k, u in enumerate(keep)}
        pairs, negs = [], []
        for idx, (u, i) in enumerate(self.test_pairs):
            if u in new_id:
                pairs.append((new_id[u], i))
                if self.eval_negatives:
                    negs.append(self.eval_negatives[idx])
        return Dataset(
            num_users=n,
            num_items=self.num_items,
            histories=[self.histories[u] for u in keep],
            test_pairs=pairs,
            eval_negatives=negs,
        )


class TrainInstance(NamedTuple):
    user: int
    item: int
    label: int


@dataclass(frozen=True)
class TrainInstances:
    """Parallel arrays of (user, item, label) training triples."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.users)

    def __iter__(self) -> Iterator[TrainInstance]:
        for u, i, y in zip(self.users.tolist(), self.items.tolist(), self.labels.tolist()):
            yield TrainInstance(u, i, y)

    def __getitem__(self, idx) -> TrainInstance:
        return TrainInstance(int(self.users[idx]), int(self.items[idx]), int(self.labels[idx]))

    @classmethod
    def from_list(cls, instances: Sequence[TrainInstance]) -> "TrainInstances":
        arr = np.array([tuple(x) for x in instances], dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].astype(np.int8))


@dataclass(frozen=True)
class MiniBatch:
    """All training instances of one user for one epoch."""

    user: int
    items: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.items)

    @property
    def instances(self) -> list[TrainInstance]:
        return [TrainInstance(self.user, int(i), int(y)) for i, y in zip(self.items, self.labels)]


# -- parsing -----------------------------------------------------------------


def _parse_rating_file(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError(path, lineno, f"expected 4 fields, got {len(parts)}")
            try:
                u, i, t = int(parts[0]), int(parts[1]), int(parts[3])
                float(parts[2])
            except ValueError:
                raise DataFormatError(path, lineno, f"non-numeric field in {line!r}") from None
            if u < 0 or i < 0:
                raise DataFormatError(path, lineno, "negative id")
            rows.append((u, i, t))
    return rows


def _parse_negative_file(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            head = parts[0].strip()
            if not (head.startswith("(") and head.endswith(")")):
                raise DataFormatError(path, lineno, f"expected '(user,item)', got {head!r}")
            try:
                u, i = (int(x) for x in head[1:-1].split(","))
                negs = [int(x) for x in parts[1:]]
            except ValueError:
                raise DataFormatError(path, lineno, "non-integer id") from None
            if len(negs) != NUM_EVAL_NEGATIVES:
                raise DataFormatError(
                    path, lineno, f"expected {NUM_EVAL_NEGATIVES} negatives, got {len(negs)}"
                )
            rows.append(((u, i), negs))
    return rows


def _dense_map(ids):
    uniq = np.unique(np.asarray(ids, dtype=np.int64))
    if len(uniq) == 0 or (uniq[0] == 0 and uniq[-1] == len(uniq) - 1):
        return None
    return {int(x): k for k, x in enumerate(uniq)}


def load_ncf_dataset(train_path, test_path, negatives_path) -> Dataset:
    """Load the three NCF processed files into a validated Dataset."""
    train = _parse_rating_file(train_path)
    test = _parse_rating_file(test_path)
    negatives = _parse_negative_file(negatives_path)

    if len(negatives) != len(test):
        raise ConsistencyError(
            f"{len(test)} test lines but {len(negatives)} negative lines"
        )
    test_users = [u for u, _, _ in test]
    if len(set(test_users)) != len(test_users):
        raise ConsistencyError("test file has more than one line for some user")
    for lineno, ((u, i, _), ((nu, ni), _)) in enumerate(zip(test, negatives), 1):
        if (u, i) != (nu, ni):
            raise ConsistencyError(
                f"{negatives_path}:{lineno}: pair ({nu},{ni}) does not match test pair ({u},{i})"
            )

    all_users = [u for u, _, _ in train] + test_users
    all_items = (
        [i for _, i, _ in train] + [i for _, i, _ in test]
        + [j for _, negs in negatives for j in negs]
    )
    umap, imap = _dense_map(all_users), _dense_map(all_items)
    if umap is not None:
        train = [(umap[u], i, t) for u, i, t in train]
        test = [(umap[u], i, t) for u, i, t in test]
    if imap is not None:
        train = [(u, imap[i], t) for u, i, t in train]
        test = [(u, imap[i], t) for u, i, t in test]
        negatives = [(p, [imap[j] for j in negs]) for p, negs in negatives]

    num_users = (max(all_users) + 1) if umap is None else len(umap)
    num_items = (max(all_items) + 1) if imap is None else len(imap)

    per_user = defaultdict(list)
    for u, i, _ in train:
        per_user[u].append(i)
    histories = [np.array(per_user.get(u, []), dtype=np.int64) for u in range(num_users)]

    ds = Dataset(
        num_users=num_users,
        num_items=num_items,
        histories=histories,
        test_pairs=[(u, i) for u, i, _ in test],
        eval_negatives=[np.array(negs, dtype=np.int64) for _, negs in negatives],
    )
    ds.validate()
    return ds


def dataset_paths(prefix):
    """Return the (train, test, negatives) paths for an NCF file prefix."""
    return (
        f"{prefix}.train.rating",
        f"{prefix}.test.rating",
        f"{prefix}.test.negative",
    )


def load_ncf_prefix(prefix) -> Dataset:
    return load_ncf_dataset(*dataset_paths(prefix))


def write_ncf_dataset(dataset: Dataset, prefix) -> None:
    """Write ``dataset`` as NCF processed files (rating 1, timestamp = position)."""
    train_path, test_path, neg_path = dataset_paths(prefix)
    os.makedirs(os.path.dirname(os.path.abspath(train_path)), exist_ok=True)
    with open(train_path, "w") as fh:
        for u, hist in enumerate(dataset.histories):
            for t, i in enumerate(hist.tolist()):
                fh.write(f"{u}\t{i}\t1\t{t}\n")
    with open(test_path, "w") as fh:
        for u, i in dataset.test_pairs:
            fh.write(f"{u}\t{i}\t1\t{len(dataset.histories[u])}\n")
    with open(neg_path, "w") as fh:
        for (u, i), negs in zip(dataset.test_pairs, dataset.eval_negatives):
            fh.write(f"({u},{i})\t" + "\t".join(str(j) for j in negs.tolist()) + "\n")


# -- splitting ---------------------------------------------------------------


def leave_one_out_split(interactions):
    """Hold out each user's latest interaction.

    ``interactions`` is an iterable of ``(user, item, timestamp)``.  Returns
    ``(histories, test_pairs)`` where ``histories`` maps user to the remaining
    items in timestamp order and ``test_pairs`` is sorted by user.  Ties at the
    latest timestamp go to the largest item id.
    """
    per_user = defaultdict(list)
    for u, i, t in interactions:
        per_user[int(u)].append((t, int(i)))
    histories, test_pairs = {}, []
    for u in sorted(per_user):
        events = sorted(per_user[u])
        if len(events) < 2:
            raise ValueError(f"user {u} has a single interaction; cannot hold one out")
        histories[u] = [i for _, i in events[:-1]]
        test_pairs.append((u, events[-1][1]))
    return histories, test_pairs


def holdout_validation(dataset: Dataset, seed: int):
    """Move one uniformly drawn training interaction per user into a validation set.

    Users with fewer than two training items keep their history intact.
    Returns ``(train_dataset, validation_pairs)``.
    """
    rng = np.random.default_rng(seed)
    histories, pairs = [], []
    for u, hist in enumerate(dataset.histories):
        if len(hist) < 2:
            histories.append(hist)
            continue
        k = int(rng.integers(len(hist)))
        pairs.append((u, int(hist[k])))
        histories.append(np.delete(hist, k))
    train = Dataset(
        num_users=dataset.num_users,
        num_items=dataset.num_items,
        histories=histories,
        test_pairs=dataset.test_pairs,
        eval_negatives=dataset.eval_negatives,
    )
    return train, pairs


def sample_eval_negatives(histories, test_pairs, num_items, seed, n=NUM_EVAL_NEGATIVES):
    """Draw ``n`` distinct evaluation negatives per test pair (items never seen by the user)."""
    rng = np.random.default_rng(seed)
    out = []
    for u, i in test_pairs:
        mask = np.ones(num_items, dtype=bool)
        mask[np.asarray(histories[u], dtype=np.int64)] = False
        mask[i] = False
        cand = np.flatnonzero(mask)
        if len(cand) < n:
            raise SamplingError(f"user {u}: only {len(cand)} candidate evaluation negatives")
        out.append(np.sort(rng.choice(cand, size=n, replace=False)))
    return out


def dataset_from_interactions(interactions, seed=0) -> Dataset:
    """Build a Dataset from raw ``(user, item, timestamp)`` triples.

    Sparse ids are remapped to dense 0-based ids (sorted order) before the
    leave-one-out split, and 99 evaluation negatives are drawn per user.
    """
    interactions = list(interactions)
    umap = _dense_map([u for u, _, _ in interactions])
    imap = _dense_map([i for _, i, _ in interactions])
    if umap is not None or imap is not None:
        interactions = [
            (umap[u] if umap else u, imap[i] if imap else i, t) for u, i, t in interactions
        ]
    hist_map, test_pairs = leave_one_out_split(interactions)
    num_users = max(hist_map) + 1
    num_items = max(i for _, i, _ in interactions) + 1
    histories = [np.array(hist_map.get(u, []), dtype=np.int64) for u in range(num_users)]
    negs = sample_eval_negatives(histories, test_pairs, num_items, seed)
    ds = Dataset(num_users, num_items, histories, test_pairs, negs)
    ds.validate()
    return ds


# -- training instances ------------------------------------------------------


def sample_negatives(dataset: Dataset, ratio: int, seed: int) -> TrainInstances:
    """Pair every training positive with ``ratio`` uniformly drawn unseen items.

    Instances are laid out per user, each positive immediately followed by its
    negatives.  Negatives are drawn with replacement; the held-out test item is
    a legal negative.
    """
    if ratio < 0:
        raise ValueError(f"negative ratio must be >= 0, got {ratio}")
    rng = np.random.default_rng(seed)
    I = dataset.num_items
    mask = np.ones(I, dtype=bool)
    users, items = [], []
    for u, hist in enumerate(dataset.histories):
        n = len(hist)
        if n == 0:
            continue
        block = np.empty((n, ratio + 1), dtype=np.int64)
        block[:, 0] = hist
        if ratio:
            if n >= I:
                raise SamplingError(f"user {u} has interacted with every item")
            mask[hist] = False
            cand = np.flatnonzero(mask)
            mask[hist] = True
            block[:, 1:] = cand[rng.integers(0, len(cand), size=(n, ratio))]
        items.append(block.ravel())
        users.append(np.full(n * (ratio + 1), u, dtype=np.int64))
    if not items:
        empty = np.empty(0, dtype=np.int64)
        return TrainInstances(empty, empty.copy(), np.empty(0, dtype=np.int8))
    labels = np.zeros((1, ratio + 1), dtype=np.int8)
    labels[0, 0] = 1
    total = sum(len(x) for x in items)
    return TrainInstances(
        np.concatenate(users),
        np.concatenate(items),
        np.tile(labels, (total // (ratio + 1), 1)).ravel(),
    )


def user_minibatches(instances: TrainInstances, seed: int) -> list[MiniBatch]:
    """Group instances by user and shuffle the user order with ``seed``."""
    if len(instances) == 0:
        return []
    order = np.argsort(instances.users, kind="stable")
    users_sorted = instances.users[order]
    uniq, starts = np.unique(users_sorted, return_index=True)
    bounds = np.append(starts, len(order))
    batches = [
        MiniBatch(
            int(u),
            instances.items[order[bounds[k]:bounds[k + 1]]],
            instances.labels[order[bounds[k]:bounds[k + 1]]],
        )
        for k, u in enumerate(uniq)
    ]
    perm = np.random.default_rng(seed).permutation(len(batches))
    return [batches[k] for k in perm]
