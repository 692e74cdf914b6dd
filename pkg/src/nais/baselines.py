"""Popularity and cosine ItemKNN reference recommenders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset


def pop_scores(dataset: Dataset) -> np.ndarray:
    """Number of training interactions per item."""
    if dataset.num_train_interactions == 0:
        return np.zeros(dataset.num_items)
    return np.bincount(
        np.concatenate(dataset.histories), minlength=dataset.num_items
    ).astype(np.float64)


@dataclass
class ItemSimMatrix:
    """Symmetric cosine similarities with a zero diagonal, stored as CSR."""

    sims: sp.csr_matrix

    def __getitem__(self, idx):
        i, j = idx
        return float(self.sims[i, j])

    @property
    def num_items(self) -> int:
        return self.sims.shape[0]


def _interaction_matrix(dataset: Dataset) -> sp.csr_matrix:
    rows = np.concatenate(
        [np.full(len(h), u, dtype=np.int64) for u, h in enumerate(dataset.histories)]
        or [np.empty(0, dtype=np.int64)]
    )
    cols = (
        np.concatenate(dataset.histories)
        if dataset.num_train_interactions
        else np.empty(0, dtype=np.int64)
    )
    return sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(dataset.num_users, dataset.num_items)
    )


def itemknn_similarities(dataset: Dataset, neighbors: int | None = None) -> ItemSimMatrix:
    """Cosine similarity between item columns of the binary user-item matrix.

    ``neighbors`` keeps only the largest similarities per item row; the default
    keeps every neighbor.  Truncation is symmetrized by taking the union.
    """
    R = _interaction_matrix(dataset)
    co = (R.T @ R).tocsr()
    co.setdiag(0.0)
    co.eliminate_zeros()
    counts = np.asarray(R.sum(axis=0)).ravel()
    inv = np.zeros_like(counts)
    nz = counts > 0
    inv[nz] = 1.0 / np.sqrt(counts[nz])
    # scale each entry by inv[i] * inv[j] so the result is exactly symmetric
    co = co.tocoo()
    sims = sp.csr_matrix(
        (co.data * (inv[co.row] * inv[co.col]), (co.row, co.col)), shape=co.shape
    )
    if neighbors is not None:
        sims = _top_neighbors(sims, neighbors)
    sims.sort_indices()
    return ItemSimMatrix(sims)


def _top_neighbors(sims: sp.csr_matrix, n: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(sims.shape[0]):
        lo, hi = sims.indptr[i], sims.indptr[i + 1]
        idx, data = sims.indices[lo:hi], sims.data[lo:hi]
        if len(data) > n:
            keep = np.argsort(-data, kind="stable")[:n]
            idx, data = idx[keep], data[keep]
        rows.append(np.full(len(idx), i))
        cols.append(idx)
        vals.append(data)
    top = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=sims.shape
    )
    return top.maximum(top.T).tocsr()


def itemknn_predict(sims: ItemSimMatrix, dataset: Dataset, user: int, target: int) -> float:
    """Sum of similarities between ``target`` and the user's other history items."""
    hist = dataset.histories[user]
    hist = hist[hist != target]
    if len(hist) == 0:
        return 0.0
    return float(sims.sims[target][:, hist].sum())


def itemknn_score_fn(sims: ItemSimMatrix):
    """Batch scorer for :func:`nais.evaluate.evaluate`."""
    S = sims.sims

    def score(user, history, candidates):
        hist = np.asarray(history, dtype=np.int64)
        block = S[np.asarray(candidates)][:, hist].toarray()
        block[np.asarray(candidates)[:, None] == hist[None, :]] = 0.0
        return block.sum(axis=1)

    return score


def pop_score_fn(scores: np.ndarray):
    return lambda user, history, candidates: scores[np.asarray(candidates)]
