"""Adagrad training for FISM and NAIS over user-based mini-batches.

Each epoch resamples negatives with seed ``seed + epoch``, shuffles users with
the same seed, and applies one Adagrad update per instance in batch order.

Two engines produce the same updates: ``"reference"`` drives
:func:`nais.grads.grad_fism` / :func:`nais.grads.grad_nais` and
:func:`adagrad_step` from Python, while ``"fast"`` (the default) runs fused
numba kernels.  The test suite checks they agree.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import Dataset, TrainInstances, sample_negatives, user_minibatches
from .grads import LossConfig, grad_fism, grad_nais, instance_loss
from .model import ConfigurationError, FismParams, NaisParams, fism_predict, nais_predict

log = logging.getLogger(__name__)

MODELS = ("fism", "nais-concat", "nais-prod")
_PARAM_NAMES = ("P", "Q", "W", "b", "h")


class DivergenceError(RuntimeError):
    """A non-finite loss or gradient appeared during training."""

    def __init__(self, message, epoch=None, user=None, param=None):
        super().__init__(message)
        self.epoch = epoch
        self.user = user
        self.param = param


@dataclass
class TrainConfig:
    model: str = "fism"
    k: int = 16
    a: int = 16
    alpha: float = 0.0
    beta: float = 0.5
    lam: float = 0.0
    lr: float = 0.01
    epochs: int = 50
    neg_ratio: int = 4
    seed: int = 0
    eps: float = 1e-8
    init_std: float = 0.01
    pretrain_path: str | None = None
    eval_every: int = 0
    topk: int = 10

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.k < 1 or self.a < 1:
            raise ConfigurationError("k and a must be >= 1")
        if self.neg_ratio < 1:
            raise ConfigurationError("neg_ratio must be >= 1 for training")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lam < 0 or self.lr <= 0 or self.epochs < 0:
            raise ConfigurationError("lambda >= 0, lr > 0 and epochs >= 0 required")

    @property
    def variant(self) -> str | None:
        return self.model.split("-", 1)[1] if self.model.startswith("nais") else None


@dataclass
class EpochLog:
    epoch: int
    loss: float
    seconds: float
    hr: float | None = None
    ndcg: float | None = None

    def line(self) -> str:
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        return f"{self.epoch}\t{self.loss:.6f}\t{self.seconds:.3f}\t{fmt(self.hr)}\t{fmt(self.ndcg)}"


@dataclass
class AdagradState:
    accumulators: dict
    lr: float = 0.01
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=0.01, eps=1e-8) -> "AdagradState":
        names = _PARAM_NAMES if isinstance(params, NaisParams) else ("P", "Q")
        return cls({n: np.zeros_like(getattr(params, n)) for n in names}, lr, eps)


def adagrad_step(state: AdagradState, params, grads, context=None):
    """Apply ``theta -= lr * g / (sqrt(acc) + eps)`` to every block in ``grads``.

    Parameters and accumulators are updated in place and also returned.
    """
    for name, key, g in grads.items():
        if not np.all(np.isfinite(g)):
            ctx = context or {}
            raise DivergenceError(
                f"non-finite gradient for {name}"
                + (f"[{key}]" if key is not None else "")
                + "".join(f", {k}={v}" for k, v in ctx.items()),
                epoch=ctx.get("epoch"),
                user=ctx.get("user"),
                param=name,
            )
        acc = state.accumulators[name]
        theta = getattr(params, name)
        if key is None:
            acc += g * g
            theta -= state.lr * g / (np.sqrt(acc) + state.eps)
        else:
            acc[key] += g * g
            theta[key] -= state.lr * g / (np.sqrt(acc[key]) + state.eps)
    return state, params


def init_params(cfg: TrainConfig, num_items: int, seed: int):
    """Gaussian(0, ``cfg.init_std``) initialization, drawn in the order P, Q, W, b, h."""
    if num_items < 1:
        raise ConfigurationError("need at least one item")
    rng = np.random.default_rng(seed)
    std = cfg.init_std
    P = rng.normal(0.0, std, size=(num_items, cfg.k))
    Q = rng.normal(0.0, std, size=(num_items, cfg.k))
    if cfg.model == "fism":
        return FismParams(P, Q, cfg.alpha)
    d = 2 * cfg.k if cfg.variant == "concat" else cfg.k
    W = rng.normal(0.0, std, size=(cfg.a, d))
    b = rng.normal(0.0, std, size=cfg.a)
    h = rng.normal(0.0, std, size=cfg.a)
    return NaisParams(P, Q, W, b, h, cfg.beta, cfg.variant)


# -- fused kernels -------------------------------------------------------------


@njit(cache=True)
def _sigmoid(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


@njit(cache=True)
def _logloss(score, label):
    x = score if label else -score
    return math.log1p(math.exp(-abs(x))) + max(-x, 0.0)


@njit(cache=True)
def _effective(indptr, indices, user, target, buf):
    n = 0
    for t in range(indptr[user], indptr[user + 1]):
        j = indices[t]
        if j != target:
            buf[n] = j
            n += 1
    return n


@njit(cache=True)
def _row_update(theta, acc, row, g, lr, eps):
    for c in range(g.shape[0]):
        acc[row, c] += g[c] * g[c]
        theta[row, c] -= lr * g[c] / (math.sqrt(acc[row, c]) + eps)


@njit(cache=True)
def _all_finite(x):
    for v in x.ravel():
        if not math.isfinite(v):
            return False
    return True


@njit(cache=True)
def _fism_epoch(P, Q, accP, accQ, indptr, indices, users, items, labels, alpha, lam, lr, eps):
    """Returns (total loss, failing instance or -1, failing parameter code)."""
    k = P.shape[1]
    maxlen = 1
    for u in range(indptr.shape[0] - 1):
        maxlen = max(maxlen, indptr[u + 1] - indptr[u])
    buf = np.empty(maxlen, dtype=np.int64)
    uv = np.empty(k)
    gp = np.empty(k)
    gq = np.empty(k)
    total = 0.0
    lam2 = 2.0 * lam
    for t in range(users.shape[0]):
        u, i, y = users[t], items[t], labels[t]
        n = _effective(indptr, indices, u, i, buf)
        scale = float(n) ** (-alpha) if n > 0 else 0.0
        for c in range(k):
            uv[c] = 0.0
        for s in range(n):
            j = buf[s]
            for c in range(k):
                uv[c] += Q[j, c]
        score = 0.0
        for c in range(k):
            uv[c] *= scale
            score += P[i, c] * uv[c]
        total += _logloss(score, y)
        delta = _sigmoid(score) - y if n > 0 else 0.0
        for c in range(k):
            gp[c] = delta * uv[c] + lam2 * P[i, c]
            gq[c] = delta * scale * P[i, c]
        if not (math.isfinite(score) and _all_finite(gp)):
            return total, t, 0
        if not _all_finite(gq):
            return total, t, 1
        for s in range(n):
            j = buf[s]
            for c in range(k):
                g = gq[c] + lam2 * Q[j, c]
                accQ[j, c] += g * g
                Q[j, c] -= lr * g / (math.sqrt(accQ[j, c]) + eps)
        _row_update(P, accP, i, gp, lr, eps)
    return total, -1, -1


@njit(cache=True)
def _nais_epoch(P, Q, W, b, h, accP, accQ, accW, accb, acch, concat, beta,
                indptr, indices, users, items, labels, lam, lr, eps):
    k = P.shape[1]
    a = W.shape[0]
    d = W.shape[1]
    maxlen = 1
    for u in range(indptr.shape[0] - 1):
        maxlen = max(maxlen, indptr[u + 1] - indptr[u])
    buf = np.empty(maxlen, dtype=np.int64)
    x = np.empty((maxlen, d))
    z = np.empty((maxlen, a))
    f = np.empty(maxlen)
    sims = np.empty(maxlen)
    wts = np.empty(maxlen)
    gz = np.empty(a)
    gW = np.empty((a, d))
    gb = np.empty(a)
    gh = np.empty(a)
    gp = np.empty(k)
    gx = np.empty(d)
    gq = np.empty((maxlen, k))
    total = 0.0
    for t in range(users.shape[0]):
        u, i, y = users[t], items[t], labels[t]
        n = _effective(indptr, indices, u, i, buf)
        score = 0.0
        lse = 0.0
        for s in range(n):
            j = buf[s]
            dot = 0.0
            for c in range(k):
                dot += P[i, c] * Q[j, c]
                if concat:
                    x[s, c] = P[i, c]
                    x[s, k + c] = Q[j, c]
                else:
                    x[s, c] = P[i, c] * Q[j, c]
            sims[s] = dot
            fs = 0.0
            for r in range(a):
                acc = b[r]
                for c in range(d):
                    acc += W[r, c] * x[s, c]
                z[s, r] = acc
                if acc > 0.0:
                    fs += h[r] * acc
            f[s] = fs
        if n > 0:
            m = f[0]
            for s in range(1, n):
                m = max(m, f[s])
            acc = 0.0
            for s in range(n):
                acc += math.exp(f[s] - m)
            lse = m + math.log(acc)
            for s in range(n):
                wts[s] = math.exp(f[s] - beta * lse)
                score += wts[s] * sims[s]
        total += _logloss(score, y)

        lam2 = 2.0 * lam
        for c in range(k):
            gp[c] = lam2 * P[i, c]
        for r in range(a):
            gb[r] = lam2 * b[r]
            gh[r] = lam2 * h[r]
            for c in range(d):
                gW[r, c] = lam2 * W[r, c]
        if n > 0:
            delta = _sigmoid(score) - y
            for s in range(n):
                j = buf[s]
                soft = math.exp(f[s] - lse)
                gf = delta * (wts[s] * sims[s] - beta * soft * score)
                for c in range(d):
                    gx[c] = 0.0
                for r in range(a):
                    if z[s, r] > 0.0:
                        gh[r] += gf * z[s, r]
                        g = gf * h[r]
                        gb[r] += g
                        for c in range(d):
                            gW[r, c] += g * x[s, c]
                            gx[c] += g * W[r, c]
                dw = delta * wts[s]
                for c in range(k):
                    gp[c] += dw * Q[j, c]
                    gq[s, c] = dw * P[i, c] + lam2 * Q[j, c]
                    if concat:
                        gp[c] += gx[c]
                        gq[s, c] += gx[k + c]
                    else:
                        gp[c] += gx[c] * Q[j, c]
                        gq[s, c] += gx[c] * P[i, c]
        if not math.isfinite(score):
            return total, t, 0
        if not _all_finite(gp):
            return total, t, 0
        if not _all_finite(gq[:n]):
            return total, t, 1
        if not _all_finite(gW):
            return total, t, 2
        if not _all_finite(gb):
            return total, t, 3
        if not _all_finite(gh):
            return total, t, 4
        _row_update(P, accP, i, gp, lr, eps)
        for s in range(n):
            _row_update(Q, accQ, buf[s], gq[s], lr, eps)
        for r in range(a):
            _row_update(W, accW, r, gW[r], lr, eps)
        for c in range(a):
            accb[c] += gb[c] * gb[c]
            b[c] -= lr * gb[c] / (math.sqrt(accb[c]) + eps)
            acch[c] += gh[c] * gh[c]
            h[c] -= lr * gh[c] / (math.sqrt(acch[c]) + eps)
    return total, -1, -1


# -- loop ------------------------------------------------------------------------


def _history_csr(dataset: Dataset):
    lengths = np.array([len(h) for h in dataset.histories], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    indices = (
        np.concatenate(dataset.histories).astype(np.int64)
        if lengths.sum()
        else np.empty(0, dtype=np.int64)
    )
    return indptr, indices


def epoch_instances(dataset: Dataset, cfg: TrainConfig, epoch: int) -> TrainInstances:
    """Training instances of ``epoch`` (0-based) in mini-batch order."""
    seed = cfg.seed + epoch
    instances = sample_negatives(dataset, cfg.neg_ratio, seed)
    batches = user_minibatches(instances, seed)
    if not batches:
        return instances
    users = np.concatenate([np.full(len(bt), bt.user, dtype=np.int64) for bt in batches])
    items = np.concatenate([bt.items for bt in batches])
    labels = np.concatenate([bt.labels for bt in batches])
    return TrainInstances(users, items, labels)


def _run_epoch_reference(params, state, dataset, instances, epoch):
    grad_fn = grad_nais if isinstance(params, NaisParams) else grad_fism
    cfg = LossConfig(lam=state.lam, N=1)
    total = 0.0
    for inst in instances:
        hist = dataset.histories[inst.user]
        if isinstance(params, NaisParams):
            score = nais_predict(params, hist, inst.item)[0]
        else:
            score = fism_predict(params, hist, inst.item)
        total += instance_loss(score, inst.label)
        grads = grad_fn(inst, params, dataset, cfg)
        adagrad_step(state, params, grads, {"epoch": epoch, "user": inst.user})
    return total


def _run_epoch_fast(params, state, csr, instances, epoch):
    acc = state.accumulators
    indptr, indices = csr
    args = (indptr, indices, instances.users, instances.items, instances.labels)
    if isinstance(params, NaisParams):
        total, bad, code = _nais_epoch(
            params.P, params.Q, params.W, params.b, params.h,
            acc["P"], acc["Q"], acc["W"], acc["b"], acc["h"],
            params.variant == "concat", params.beta, *args, state.lam, state.lr, state.eps,
        )
    else:
        total, bad, code = _fism_epoch(
            params.P, params.Q, acc["P"], acc["Q"], *args,
            params.alpha, state.lam, state.lr, state.eps,
        )
    if bad >= 0:
        user = int(instances.users[bad])
        raise DivergenceError(
            f"non-finite gradient for {_PARAM_NAMES[code]} at epoch {epoch}, user {user}",
            epoch=epoch, user=user, param=_PARAM_NAMES[code],
        )
    return total


@dataclass
class _LoopState(AdagradState):
    lam: float = 0.0


def _train(params, dataset: Dataset, cfg: TrainConfig, engine, on_epoch, evaluate_fn):
    if engine not in ("fast", "reference"):
        raise ValueError(f"unknown engine {engine!r}")
    base = AdagradState.zeros_like(params, cfg.lr, cfg.eps)
    state = _LoopState(base.accumulators, cfg.lr, cfg.eps, cfg.lam)
    csr = _history_csr(dataset)
    logs = []
    if on_epoch is not None:
        on_epoch(0, params, None)
    for e in range(cfg.epochs):
        start = time.perf_counter()
        instances = epoch_instances(dataset, cfg, e)
        if engine == "fast":
            total = _run_epoch_fast(params, state, csr, instances, e + 1)
        else:
            total = _run_epoch_reference(params, state, dataset, instances, e + 1)
        loss = total / max(len(instances), 1)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {e + 1}", epoch=e + 1)
        entry = EpochLog(e + 1, loss, time.perf_counter() - start)
        if evaluate_fn is not None and cfg.eval_every and (e + 1) % cfg.eval_every == 0:
            report = evaluate_fn(params)
            entry.hr, entry.ndcg = report.mean_hr, report.mean_ndcg
        logs.append(entry)
        log.debug("epoch %d loss %.6f", entry.epoch, entry.loss)
        if on_epoch is not None:
            on_epoch(e + 1, params, entry)
    return params, logs


def _default_eval(dataset, cfg):
    if not cfg.eval_every or not dataset.eval_negatives:
        return None
    from .evaluate import evaluate_params

    return lambda params: evaluate_params(params, dataset, cfg.topk)


def train_fism(dataset: Dataset, cfg: TrainConfig, *, engine="fast", on_epoch=None):
    """Train FISM; returns ``(FismParams, [EpochLog])``."""
    if cfg.model != "fism":
        raise ConfigurationError(f"train_fism needs model='fism', got {cfg.model!r}")
    params = init_params(cfg, dataset.num_items, cfg.seed)
    return _train(params, dataset, cfg, engine, on_epoch, _default_eval(dataset, cfg))


def train_nais(dataset: Dataset, cfg: TrainConfig, init: FismParams | None = None, *,
               engine="fast", on_epoch=None):
    """Train NAIS, optionally starting from FISM embeddings; returns ``(NaisParams, [EpochLog])``."""
    if cfg.variant is None:
        raise ConfigurationError(f"train_nais needs a NAIS model, got {cfg.model!r}")
    params = init_params(cfg, dataset.num_items, cfg.seed)
    if init is not None:
        if init.P.shape != params.P.shape:
            raise ConfigurationError(
                f"pre-trained embeddings {init.P.shape} do not match ({dataset.num_items}, {cfg.k})"
            )
        params.P = init.P.copy()
        params.Q = init.Q.copy()
    return _train(params, dataset, cfg, engine, on_epoch, _default_eval(dataset, cfg))
