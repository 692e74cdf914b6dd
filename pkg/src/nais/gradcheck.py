"""Central finite-difference certification of the analytic gradients."""
from __future__ import annotations

import numpy as np

from .grads import LossConfig, grad_fism, grad_nais, instance_loss
from .model import NaisParams, _attention_input, effective_history, fism_predict, nais_predict


def instance_objective(params, dataset, instance, cfg: LossConfig) -> float:
    """Single-instance objective evaluated with forward passes only."""
    user, target, label = instance
    history = dataset.histories[user]
    hist = effective_history(history, target)
    if isinstance(params, NaisParams):
        score = nais_predict(params, history, target)[0]
        reg = np.sum(params.W**2) + np.sum(params.b**2) + np.sum(params.h**2)
    else:
        score = fism_predict(params, history, target)
        reg = 0.0
    reg += np.sum(params.P[target] ** 2) + np.sum(params.Q[hist] ** 2)
    return instance_loss(score, label) / cfg.N + cfg.lam * float(reg)


def min_preactivation(params, dataset, instance) -> float:
    """Smallest |W x + b| over the instance's history (distance to a ReLU kink)."""
    if not isinstance(params, NaisParams):
        return np.inf
    user, target, _ = instance
    hist = effective_history(dataset.histories[user], target)
    if len(hist) == 0:
        return np.inf
    x = _attention_input(params, params.P[target], params.Q[hist])
    return float(np.abs(x @ params.W.T + params.b).min())


def max_relative_error(params, dataset, instance, cfg: LossConfig, h=1e-5) -> float:
    """Largest ``|analytic - numeric| / max(1, |analytic|)`` over touched coordinates."""
    grad_fn = grad_nais if isinstance(params, NaisParams) else grad_fism
    grads = grad_fn(instance, params, dataset, cfg)
    worst = 0.0
    for name, key, g in grads.items():
        arr = getattr(params, name)
        view = arr[key] if key is not None else arr
        for idx in np.ndindex(view.shape):
            old = view[idx]
            view[idx] = old + h
            up = instance_objective(params, dataset, instance, cfg)
            view[idx] = old - h
            down = instance_objective(params, dataset, instance, cfg)
            view[idx] = old
            numeric = (up - down) / (2 * h)
            worst = max(worst, abs(g[idx] - numeric) / max(1.0, abs(g[idx])))
    return worst
