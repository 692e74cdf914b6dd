"""FISM and NAIS scoring.

FISM scores a (user, target) pair as ``p_i . (n**-alpha * sum_j q_j)`` over the
user's history with the target removed.  NAIS replaces the constant weight
with an attention MLP over ``(p_i, q_j)`` whose outputs go through a softmax
with the denominator raised to ``beta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VARIANTS = ("concat", "prod")


class ConfigurationError(ValueError):
    """Parameter shapes or hyper-parameters are inconsistent."""


class EmptyHistoryError(ValueError):
    """The effective history (history minus target) is empty."""


@dataclass
class FismParams:
    P: np.ndarray
    Q: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        if self.P.shape != self.Q.shape or self.P.ndim != 2:
            raise ConfigurationError(f"P {self.P.shape} and Q {self.Q.shape} must match")

    @property
    def num_items(self) -> int:
        return self.P.shape[0]

    @property
    def k(self) -> int:
        return self.P.shape[1]


@dataclass
class NaisParams:
    P: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    b: np.ndarray
    h: np.ndarray
    beta: float = 0.5
    variant: str = "prod"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown attention variant {self.variant!r}")
        if self.P.shape != self.Q.shape or self.P.ndim != 2:
            raise ConfigurationError(f"P {self.P.shape} and Q {self.Q.shape} must match")
        d = 2 * self.k if self.variant == "concat" else self.k
        a = self.W.shape[0]
        if self.W.shape != (a, d):
            raise ConfigurationError(
                f"{self.variant} attention needs W of shape ({a}, {d}), got {self.W.shape}"
            )
        if self.b.shape != (a,) or self.h.shape != (a,):
            raise ConfigurationError("b and h must have length equal to the attention factor")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def num_items(self) -> int:
        return self.P.shape[0]

    @property
    def k(self) -> int:
        return self.P.shape[1]

    @property
    def a(self) -> int:
        return self.W.shape[0]


@dataclass
class AttentionWeights:
    items: np.ndarray
    logits: np.ndarray
    weights: np.ndarray


def effective_history(history, target: int) -> np.ndarray:
    hist = np.asarray(history, dtype=np.int64)
    return hist[hist != target]


def _check_ids(num_items, *ids):
    for x in ids:
        arr = np.asarray(x)
        if arr.size and (arr.min() < 0 or arr.max() >= num_items):
            raise IndexError(f"item id out of range [0, {num_items})")


def fism_predict(params: FismParams, history, target: int) -> float:
    _check_ids(params.num_items, history, target)
    hist = effective_history(history, target)
    n = len(hist)
    if n == 0:
        return 0.0
    user_vec = params.Q[hist].sum(axis=0) * n ** (-params.alpha)
    return float(params.P[target] @ user_vec)


def _attention_input(params: NaisParams, p, q):
    if params.variant == "prod":
        return p * q
    return np.concatenate([np.broadcast_to(p, q.shape), q], axis=-1)


def attention_logit(params: NaisParams, target: int, j: int) -> float:
    """Attention MLP output for a single (target, history item) pair."""
    x = _attention_input(params, params.P[target], params.Q[j])
    hidden = np.maximum(params.W @ x + params.b, 0.0)
    return float(params.h @ hidden)


def attention_logits(params: NaisParams, target: int, items: np.ndarray) -> np.ndarray:
    """Attention logits of ``target`` against every item in ``items``."""
    x = _attention_input(params, params.P[target], params.Q[items])
    hidden = np.maximum(x @ params.W.T + params.b, 0.0)
    return hidden @ params.h


def smoothed_softmax(logits: np.ndarray, beta: float) -> np.ndarray:
    """``exp(f) / sum(exp(f))**beta`` evaluated as ``exp(f - beta * logsumexp(f))``.

    Shifting by the max alone is only valid at beta=1, so the shift is folded
    into the logsumexp instead.
    """
    logits = np.asarray(logits, dtype=np.float64)
    return np.exp(logits - beta * logsumexp(logits))


def attention_weights(params: NaisParams, history, target: int) -> AttentionWeights:
    _check_ids(params.num_items, history, target)
    items = effective_history(history, target)
    if len(items) == 0:
        raise EmptyHistoryError(f"no history items besides target {target}")
    logits = attention_logits(params, target, items)
    return AttentionWeights(items, logits, smoothed_softmax(logits, params.beta))


@dataclass
class PredictionCache:
    """Running sums for one (user, candidate) score.

    ``S`` and ``D`` are stored relative to the max logit ``m``:
    ``S = sum exp(f_j - m) * p_i.q_j`` and ``D = sum exp(f_j - m)``, so the
    score is ``exp((1 - beta) * m) * S / D**beta``.
    """

    user: int
    item: int
    S: float = 0.0
    D: float = 0.0
    m: float = -math.inf
    n: int = 0
    items: set = field(default_factory=set)

    def score(self, beta: float) -> float:
        if self.n == 0:
            return 0.0
        return math.exp((1.0 - beta) * self.m) * self.S / self.D**beta


def nais_predict(params: NaisParams, history, target: int, user: int = -1):
    """Score ``target`` against ``history``; returns ``(score, cache)``."""
    _check_ids(params.num_items, history, target)
    items = effective_history(history, target)
    cache = PredictionCache(user=user, item=int(target))
    if len(items) == 0:
        return 0.0, cache
    logits = attention_logits(params, target, items)
    sims = params.Q[items] @ params.P[target]
    m = float(logits.max())
    e = np.exp(logits - m)
    cache.S = float(e @ sims)
    cache.D = float(e.sum())
    cache.m = m
    cache.n = len(items)
    cache.items = set(items.tolist())
    score = float(smoothed_softmax(logits, params.beta) @ sims)
    return score, cache


def refresh_prediction(params: NaisParams, cache: PredictionCache, new_item: int):
    """Fold one new history item into ``cache`` in O(a*k); returns ``(score, cache)``.

    The cache is updated in place.
    """
    _check_ids(params.num_items, new_item)
    new_item = int(new_item)
    if new_item == cache.item:
        raise ValueError(f"new item {new_item} is the cached candidate itself")
    if new_item in cache.items:
        raise ValueError(f"item {new_item} is already in the cached history")
    f = attention_logit(params, cache.item, new_item)
    sim = float(params.P[cache.item] @ params.Q[new_item])
    if f > cache.m:
        scale = math.exp(cache.m - f) if cache.n else 0.0
        cache.S *= scale
        cache.D *= scale
        cache.m = f
    e = math.exp(f - cache.m)
    cache.S += e * sim
    cache.D += e
    cache.n += 1
    cache.items.add(new_item)
    return cache.score(params.beta), cache


def score_candidates(params, history, candidates) -> np.ndarray:
    """Score every candidate against ``history`` (each candidate excluded from its own history)."""
    hist = np.asarray(history, dtype=np.int64)
    cands = np.asarray(candidates, dtype=np.int64)
    if len(hist) == 0:
        return np.zeros(len(cands))
    keep = hist[None, :] != cands[:, None]
    sims = params.P[cands] @ params.Q[hist].T
    if isinstance(params, FismParams):
        n = keep.sum(axis=1)
        scale = np.where(n > 0, np.maximum(n, 1).astype(np.float64) ** (-params.alpha), 0.0)
        return (sims * keep).sum(axis=1) * scale
    pt, qh = params.P[cands], params.Q[hist]
    if params.variant == "prod":
        pre = (pt[:, None, :] * qh[None, :, :]) @ params.W.T
    else:
        k = params.k
        pre = (pt @ params.W[:, :k].T)[:, None, :] + (qh @ params.W[:, k:].T)[None, :, :]
    logits = np.maximum(pre + params.b, 0.0) @ params.h
    any_kept = keep.any(axis=1)
    logits = np.where(keep, logits, -np.inf)
    logits[~any_kept] = 0.0
    lse = logsumexp(logits, axis=1, keepdims=True)
    weights = np.where(keep, np.exp(logits - params.beta * lse), 0.0)
    return np.where(any_kept, (weights * sims).sum(axis=1), 0.0)
