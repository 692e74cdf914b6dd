import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import nais.model as model
from nais.model import (
    ConfigurationError,
    EmptyHistoryError,
    FismParams,
    NaisParams,
    attention_logit,
    attention_weights,
    fism_predict,
    nais_predict,
    refresh_prediction,
    score_candidates,
    smoothed_softmax,
)

from conftest import random_fism, random_nais


def naive_nais(params, history, target):
    """O(n^2) oracle: every weight recomputes its own denominator from scalars."""
    items = [j for j in history if j != target]
    logits = []
    for j in items:
        logits.append(attention_logit(params, target, j))
    score = 0.0
    for idx, j in enumerate(items):
        denom = sum(math.exp(f) for f in logits)
        weight = math.exp(logits[idx]) / denom**params.beta
        score += weight * sum(params.P[target, c] * params.Q[j, c] for c in range(params.k))
    return score


# -- FISM ----------------------------------------------------------------------


def test_fism_empty_history(rng):
    assert fism_predict(random_fism(rng), [], 3) == 0.0


def test_fism_only_target_in_history(rng):
    assert fism_predict(random_fism(rng), [3], 3) == 0.0


def test_fism_single_item(rng):
    params = random_fism(rng)
    assert fism_predict(params, [5], 2) == pytest.approx(params.P[2] @ params.Q[5], abs=1e-15)


def test_fism_hand_example():
    P = np.zeros((3, 2))
    Q = np.zeros((3, 2))
    P[0] = [1.0, 0.0]
    Q[1] = [0.5, 0.5]
    Q[2] = [0.2, -0.4]
    params = FismParams(P, Q, alpha=0.5)
    # 0.7 / sqrt(2) from mpmath
    assert fism_predict(params, [1, 2], 0) == pytest.approx(0.494974746830583267, abs=1e-15)


def test_fism_out_of_range(rng):
    with pytest.raises(IndexError):
        fism_predict(random_fism(rng), [1, 99], 2)


# -- attention -------------------------------------------------------------------


def test_logit_zero_projection(rng):
    params = random_nais(rng)
    params.h[:] = 0.0
    assert attention_logit(params, 1, 2) == 0.0


def test_logit_zero_layer(rng):
    params = random_nais(rng)
    params.W[:] = 0.0
    params.b[:] = 0.0
    assert attention_logit(params, 1, 2) == 0.0


def test_logit_hand_example():
    params = NaisParams(
        P=np.array([[2.0], [0.0]]),
        Q=np.array([[0.0], [3.0]]),
        W=np.array([[1.0]]),
        b=np.array([-1.0]),
        h=np.array([2.0]),
        variant="prod",
    )
    assert attention_logit(params, 0, 1) == 10.0


def test_concat_logit_matches_scalar_evaluation(rng):
    params = random_nais(rng, variant="concat")
    x = list(params.P[4]) + list(params.Q[7])
    hidden = [max(sum(params.W[r, c] * x[c] for c in range(len(x))) + params.b[r], 0.0)
              for r in range(params.a)]
    expected = sum(params.h[r] * hidden[r] for r in range(params.a))
    assert attention_logit(params, 4, 7) == pytest.approx(expected, abs=1e-13)


def test_variant_dimension_mismatch(rng):
    params = random_nais(rng, variant="prod")
    with pytest.raises(ConfigurationError):
        NaisParams(params.P, params.Q, params.W, params.b, params.h, 0.5, "concat")


def test_beta_out_of_range(rng):
    params = random_nais(rng)
    with pytest.raises(ConfigurationError):
        NaisParams(params.P, params.Q, params.W, params.b, params.h, 1.5, "prod")


def test_uniform_logits_softmax():
    w = smoothed_softmax(np.full(7, 3.2), 1.0)
    assert np.allclose(w, 1 / 7, atol=1e-15)


def test_beta_zero_is_plain_exp():
    f = np.array([-1.0, 0.3, 2.0])
    assert np.allclose(smoothed_softmax(f, 0.0), np.exp(f), rtol=1e-15)


def test_smoothed_softmax_hand_example():
    # e / sqrt(e + e^2) and e^2 / sqrt(e + e^2) from mpmath
    w = smoothed_softmax(np.array([1.0, 2.0]), 0.5)
    assert w == pytest.approx([0.855019636400243664, 2.32418434060244238], abs=1e-14)


def test_attention_weights_exclude_target(rng):
    params = random_nais(rng)
    aw = attention_weights(params, [1, 2, 3], 2)
    assert aw.items.tolist() == [1, 3]
    assert len(aw.logits) == len(aw.weights) == 2


def test_attention_weights_empty(rng):
    with pytest.raises(EmptyHistoryError):
        attention_weights(random_nais(rng), [4], 4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=50), st.floats(0, 1))
def test_weights_finite_and_positive(logits, beta):
    w = smoothed_softmax(np.array(logits), beta)
    assert np.all(np.isfinite(w))
    assert np.all(w >= 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=50))
def test_positive_weights_for_moderate_logits(logits):
    assert np.all(smoothed_softmax(np.array(logits), 0.5) > 0)


@pytest.mark.parametrize("n", [1, 10, 500, 3000])
def test_beta_one_normalizes(rng, n):
    w = smoothed_softmax(rng.normal(scale=5.0, size=n), 1.0)
    assert abs(w.sum() - 1.0) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_monotone_in_beta(logits):
    f = np.array(logits)
    total = np.exp(f).sum()
    betas = np.linspace(0, 1, 11)
    ws = np.array([smoothed_softmax(f, b) for b in betas])
    steps = np.diff(ws, axis=0)
    if total > 1:
        assert np.all(steps <= 1e-12 * ws[:-1])
    elif total < 1:
        assert np.all(steps >= -1e-12 * ws[:-1])


# -- NAIS predictions ------------------------------------------------------------


def test_nais_empty_effective_history(rng):
    score, cache = nais_predict(random_nais(rng), [6], 6)
    assert score == 0.0 and cache.n == 0


@pytest.mark.parametrize("variant", ["prod", "concat"])
@pytest.mark.parametrize("beta", [0.0, 0.3, 0.5, 1.0])
def test_nais_matches_naive_oracle(rng, variant, beta):
    params = random_nais(rng, k=4, a=5, beta=beta, variant=variant, scale=0.7)
    history = rng.choice(12, size=5, replace=False).tolist()
    target = int(rng.integers(12))
    assert nais_predict(params, history, target)[0] == pytest.approx(
        naive_nais(params, history, target), abs=1e-12
    )


@pytest.mark.parametrize("variant", ["prod", "concat"])
def test_fism_equivalence(rng, variant):
    for _ in range(50):
        alpha = float(rng.uniform())
        params = random_nais(rng, beta=alpha, variant=variant)
        params.h[:] = 0.0
        fism = FismParams(params.P, params.Q, alpha)
        history = rng.choice(12, size=int(rng.integers(0, 8)), replace=False)
        target = int(rng.integers(12))
        assert abs(nais_predict(params, history, target)[0] - fism_predict(fism, history, target)) < 1e-12


def test_adding_target_never_changes_score(rng):
    params = random_nais(rng)
    base = nais_predict(params, [1, 2, 3], 5)[0]
    assert nais_predict(params, [1, 5, 2, 3], 5)[0] == base


def test_cache_score_matches_forward(rng):
    params = random_nais(rng, scale=2.0)
    score, cache = nais_predict(params, [0, 1, 2, 3, 4], 7, user=3)
    assert cache.user == 3 and cache.item == 7 and cache.n == 5
    assert abs(cache.score(params.beta) - score) < 1e-12 * max(1.0, abs(score))


# -- refresh ---------------------------------------------------------------------


def test_refresh_matches_from_scratch(rng):
    params = random_nais(rng, num_items=30, scale=1.5)
    _, cache = nais_predict(params, [1, 2, 3], 10)
    score, cache = refresh_prediction(params, cache, 17)
    assert abs(score - nais_predict(params, [1, 2, 3, 17], 10)[0]) < 1e-12
    assert cache.n == 4


def test_refresh_from_empty_cache(rng):
    params = random_nais(rng)
    _, cache = nais_predict(params, [], 4)
    score, cache = refresh_prediction(params, cache, 1)
    assert abs(score - nais_predict(params, [1], 4)[0]) < 1e-12


def test_refresh_rejects_candidate_and_duplicates(rng):
    params = random_nais(rng)
    _, cache = nais_predict(params, [1, 2], 4)
    with pytest.raises(ValueError):
        refresh_prediction(params, cache, 4)
    with pytest.raises(ValueError):
        refresh_prediction(params, cache, 2)


def test_refresh_reshifts_on_larger_logit(rng):
    params = random_nais(rng, num_items=40, scale=3.0)
    history = list(range(5))
    _, cache = nais_predict(params, history, 39)
    for j in range(5, 30):
        score, cache = refresh_prediction(params, cache, j)
        history.append(j)
        logits = model.attention_logits(params, 39, np.array(history))
        assert cache.m == pytest.approx(logits.max(), abs=1e-12)
        assert abs(score - nais_predict(params, history, 39)[0]) <= 1e-10 * max(1.0, abs(score))


def test_refresh_evaluates_one_logit(rng, monkeypatch):
    params = random_nais(rng, num_items=20)
    _, cache = nais_predict(params, [1, 2], 9)
    calls = []
    real = model.attention_logit
    monkeypatch.setattr(model, "attention_logit", lambda *a: calls.append(a) or real(*a))
    refresh_prediction(params, cache, 5)
    assert len(calls) == 1


# -- batch scoring ---------------------------------------------------------------


@pytest.mark.parametrize("variant", ["prod", "concat"])
def test_score_candidates_matches_pointwise(rng, variant):
    params = random_nais(rng, num_items=15, variant=variant, scale=0.8)
    history = [0, 3, 4, 9]
    cands = np.array([3, 5, 6, 9, 14])
    batch = score_candidates(params, history, cands)
    single = [nais_predict(params, history, c)[0] for c in cands]
    assert np.allclose(batch, single, atol=1e-12)


def test_score_candidates_fism(rng):
    params = random_fism(rng, alpha=0.4)
    history = [1, 2, 3]
    cands = np.array([1, 4, 7])
    batch = score_candidates(params, history, cands)
    assert np.allclose(batch, [fism_predict(params, history, c) for c in cands], atol=1e-12)


def test_score_candidates_history_is_only_candidate(rng):
    params = random_nais(rng)
    assert score_candidates(params, [2], np.array([2, 3]))[0] == 0.0
