"""Leave-one-out top-K evaluation and attention diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset
from .grads import sigmoid
from .model import (
    EmptyHistoryError,
    FismParams,
    NaisParams,
    attention_weights,
    effective_history,
    fism_predict,
    nais_predict,
    score_candidates,
)


def rank_position(scores, positive: int) -> int:
    """1-based rank of ``positive`` among ``(item, score)`` pairs.

    Ties are broken in favour of the smaller item id.
    """
    items = np.array([int(i) for i, _ in scores], dtype=np.int64)
    values = np.array([float(s) for _, s in scores])
    hit = np.flatnonzero(items == positive)
    if len(hit) == 0:
        raise ValueError(f"positive item {positive} not among the scored candidates")
    return _rank(items, values, hit[0])


def _rank(items, values, pos_idx) -> int:
    v = values[pos_idx]
    higher = np.count_nonzero(values > v)
    tied = np.count_nonzero((values == v) & (items < items[pos_idx]))
    return int(1 + higher + tied)


def hr_at_k(rank: int, K: int) -> int:
    return int(rank <= K)


def ndcg_at_k(rank: int, K: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= K else 0.0


@dataclass
class EvalReport:
    users: np.ndarray
    per_user_hr: np.ndarray
    per_user_ndcg: np.ndarray
    K: int

    @property
    def mean_hr(self) -> float:
        return float(self.per_user_hr.mean()) if len(self.per_user_hr) else 0.0

    @property
    def mean_ndcg(self) -> float:
        return float(self.per_user_ndcg.mean()) if len(self.per_user_ndcg) else 0.0

    def lines(self) -> list[str]:
        return [
            f"HR@{self.K}\t{self.mean_hr:.6f}",
            f"NDCG@{self.K}\t{self.mean_ndcg:.6f}",
            f"users\t{len(self.users)}",
        ]

    def __eq__(self, other):
        return (
            isinstance(other, EvalReport)
            and self.K == other.K
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.per_user_hr, other.per_user_hr)
            and np.array_equal(self.per_user_ndcg, other.per_user_ndcg)
        )


def evaluate(score_fn, dataset: Dataset, K: int = 10) -> EvalReport:
    """Rank each held-out item against its 99 stored negatives.

    ``score_fn(user, history, candidates)`` returns one score per candidate.
    Users are reported in ascending id order.
    """
    if len(dataset.eval_negatives) != len(dataset.test_pairs):
        raise ValueError("dataset is missing evaluation negatives for some users")
    order = sorted(range(len(dataset.test_pairs)), key=lambda k: dataset.test_pairs[k][0])
    users, hrs, ndcgs = [], [], []
    for idx in order:
        u, pos = dataset.test_pairs[idx]
        cands = np.concatenate([[pos], dataset.eval_negatives[idx]]).astype(np.int64)
        scores = np.asarray(score_fn(u, dataset.histories[u], cands), dtype=np.float64)
        rank = _rank(cands, scores, 0)
        users.append(u)
        hrs.append(hr_at_k(rank, K))
        ndcgs.append(ndcg_at_k(rank, K))
    return EvalReport(
        np.array(users, dtype=np.int64), np.array(hrs, dtype=np.int64), np.array(ndcgs), K
    )


def evaluate_params(params, dataset: Dataset, K: int = 10) -> EvalReport:
    return evaluate(lambda u, hist, cands: score_candidates(params, hist, cands), dataset, K)


def paired_ttest(per_user_a, per_user_b) -> float:
    """Two-sided p-value of the one-sample t-test on paired differences."""
    a = np.asarray(per_user_a, dtype=np.float64)
    b = np.asarray(per_user_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    diff = b - a
    if not np.any(diff):
        raise ValueError("all paired differences are zero; the test is undefined")
    n = len(diff)
    sd = diff.std(ddof=1)
    if sd == 0.0:
        return 0.0
    t = diff.mean() / (sd / math.sqrt(n))
    return float(2.0 * stats.t.sf(abs(t), df=n - 1))


@dataclass
class Explanation:
    items: np.ndarray
    weights: np.ndarray
    probability: float

    def lines(self) -> list[str]:
        out = [f"{i}\t{w:.6f}" for i, w in zip(self.items.tolist(), self.weights.tolist())]
        out.append(f"sigmoid\t{self.probability:.6f}")
        return out


def explain(params, dataset: Dataset, user: int, target: int) -> Explanation:
    """L1-normalized per-item contribution weights behind one prediction."""
    history = dataset.histories[user]
    items = effective_history(history, target)
    if len(items) == 0:
        raise EmptyHistoryError(f"user {user} has no history besides item {target}")
    if isinstance(params, NaisParams):
        weights = attention_weights(params, history, target).weights
        score = nais_predict(params, history, target)[0]
    else:
        weights = np.ones(len(items))
        score = fism_predict(params, history, target)
    return Explanation(items, weights / weights.sum(), float(sigmoid(score)))


@dataclass
class AttentionStat:
    user: int
    item: int
    mean: float
    variance: float


def attention_stats(params, dataset: Dataset) -> list[AttentionStat]:
    """Mean and variance of the L1-normalized weights for every test prediction."""
    out = []
    for u, i in sorted(dataset.test_pairs):
        history = dataset.histories[u]
        if len(effective_history(history, i)) == 0:
            continue
        if isinstance(params, FismParams):
            w = np.ones(len(effective_history(history, i)))
        else:
            w = attention_weights(params, history, i).weights
        w = w / w.sum()
        out.append(AttentionStat(u, i, float(w.mean()), float(w.var())))
    return out


def write_attention_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("user,item,mean,variance\n")
        for r in rows:
            fh.write(f"{r.user},{r.item},{r.mean:.10g},{r.variance:.10g}\n")
