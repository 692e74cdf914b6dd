"""Log loss and hand-derived gradients for FISM and NAIS.

All gradients are for the contribution of a single training instance to the
regularized objective::

    (1/N) * logloss(score, label) + lam * sum of squared touched parameters

where the touched parameters are the target's ``p`` row, the ``q`` rows of the
effective history and, for NAIS, the whole attention network.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    FismParams,
    NaisParams,
    effective_history,
    fism_predict,
    nais_predict,
    smoothed_softmax,
)


@dataclass
class LossConfig:
    lam: float = 0.0
    N: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")


@dataclass
class GradientSet:
    dP: dict = field(default_factory=dict)
    dQ: dict = field(default_factory=dict)
    dW: np.ndarray | None = None
    db: np.ndarray | None = None
    dh: np.ndarray | None = None

    @property
    def touched_items(self) -> set:
        return set(self.dP) | set(self.dQ)

    def items(self):
        """Yield ``(name, key, gradient)`` for every stored block."""
        for i, g in self.dP.items():
            yield "P", i, g
        for j, g in self.dQ.items():
            yield "Q", j, g
        for name in ("W", "b", "h"):
            g = getattr(self, "d" + name)
            if g is not None:
                yield name, None, g


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def instance_loss(score: float, label: int) -> float:
    """Binary log loss of ``sigmoid(score)`` without overflow."""
    x = score if label else -score
    return float(np.log1p(np.exp(-abs(x))) + max(-x, 0.0))


def squared_norm(params) -> float:
    total = float(np.sum(params.P**2) + np.sum(params.Q**2))
    if isinstance(params, NaisParams):
        total += float(np.sum(params.W**2) + np.sum(params.b**2) + np.sum(params.h**2))
    return total


def batch_objective(batches, params, dataset, cfg: LossConfig) -> float:
    """Mean log loss over the epoch (scaled by the global ``cfg.N``) plus ``lam * ||theta||^2``."""
    data = 0.0
    for batch in batches:
        hist = dataset.histories[batch.user]
        for item, label in zip(batch.items.tolist(), batch.labels.tolist()):
            if isinstance(params, NaisParams):
                score = nais_predict(params, hist, item)[0]
            else:
                score = fism_predict(params, hist, item)
            data += instance_loss(score, label)
    return data / cfg.N + cfg.lam * squared_norm(params)


def grad_fism(instance, params: FismParams, dataset, cfg: LossConfig) -> GradientSet:
    user, target, label = instance
    hist = effective_history(dataset.histories[user], target)
    grads = GradientSet()
    p = params.P[target]
    grads.dP[target] = 2.0 * cfg.lam * p
    n = len(hist)
    if n == 0:
        return grads
    scale = n ** (-params.alpha)
    user_vec = params.Q[hist].sum(axis=0) * scale
    delta = (float(sigmoid(p @ user_vec)) - label) / cfg.N
    grads.dP[target] = grads.dP[target] + delta * user_vec
    dq = delta * scale * p
    for j in hist.tolist():
        grads.dQ[j] = dq + 2.0 * cfg.lam * params.Q[j]
    return grads


def nais_forward_backward(params: NaisParams, hist, target, upstream_fn):
    """Score for ``target`` and the gradients of ``upstream * score``.

    ``upstream_fn`` maps the score to the loss derivative with respect to it.
    Returns ``(score, dp_target, dQ_rows, dW, db, dh)`` where ``dQ_rows`` is
    aligned with ``hist``.
    """
    k = params.k
    p = params.P[target]
    Qh = params.Q[hist]
    if params.variant == "prod":
        x = p * Qh
    else:
        x = np.concatenate([np.broadcast_to(p, Qh.shape), Qh], axis=1)
    z = x @ params.W.T + params.b
    active = z > 0.0
    r = np.where(active, z, 0.0)
    f = r @ params.h
    a = smoothed_softmax(f, params.beta)
    sims = Qh @ p
    score = float(a @ sims)
    upstream = upstream_fn(score)

    # d score / d f_j = a_j * s_j - beta * softmax_j * score
    w = np.exp(f - np.logaddexp.reduce(f))
    g_f = upstream * (a * sims - params.beta * w * score)

    dh = g_f @ r
    g_z = np.where(active, np.outer(g_f, params.h), 0.0)
    dW = g_z.T @ x
    db = g_z.sum(axis=0)
    g_x = g_z @ params.W

    dp = upstream * (a @ Qh)
    dQ = upstream * np.outer(a, p)
    if params.variant == "prod":
        dp = dp + (g_x * Qh).sum(axis=0)
        dQ = dQ + g_x * p
    else:
        dp = dp + g_x[:, :k].sum(axis=0)
        dQ = dQ + g_x[:, k:]
    return score, dp, dQ, dW, db, dh


def grad_nais(instance, params: NaisParams, dataset, cfg: LossConfig) -> GradientSet:
    user, target, label = instance
    hist = effective_history(dataset.histories[user], target)
    lam2 = 2.0 * cfg.lam
    grads = GradientSet(
        dP={target: lam2 * params.P[target]},
        dW=lam2 * params.W,
        db=lam2 * params.b,
        dh=lam2 * params.h,
    )
    if len(hist) == 0:
        return grads
    _, dp, dQ, dW, db, dh = nais_forward_backward(
        params, hist, target, lambda s: (float(sigmoid(s)) - label) / cfg.N
    )
    grads.dP[target] = grads.dP[target] + dp
    for row, j in enumerate(hist.tolist()):
        grads.dQ[j] = dQ[row] + lam2 * params.Q[j]
    grads.dW = grads.dW + dW
    grads.db = grads.db + db
    grads.dh = grads.dh + dh
    return grads
