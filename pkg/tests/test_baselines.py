import numpy as np
import pytest

from nais.baselines import (
    itemknn_predict,
    itemknn_score_fn,
    itemknn_similarities,
    pop_score_fn,
    pop_scores,
)
from nais.data import Dataset
from nais.evaluate import evaluate
from nais.synthetic import clustered_dataset


def dense_cosine(ds):
    R = np.zeros((ds.num_users, ds.num_items))
    for u, h in enumerate(ds.histories):
        R[u, h] = 1.0
    norms = np.sqrt(R.sum(axis=0))
    S = np.zeros((ds.num_items, ds.num_items))
    for i in range(ds.num_items):
        for j in range(ds.num_items):
            if i != j and norms[i] and norms[j]:
                S[i, j] = R[:, i] @ R[:, j] / (norms[i] * norms[j])
    return S


@pytest.fixture
def small():
    return Dataset(4, 6, [np.array(h) for h in ([0, 1, 2], [1, 2], [2, 3, 4], [0, 4])])


def test_pop_counts(small):
    assert pop_scores(small).tolist() == [2, 2, 3, 1, 2, 0]


def test_pop_score_fn(small):
    fn = pop_score_fn(pop_scores(small))
    assert fn(0, None, [2, 5]).tolist() == [3.0, 0.0]


def test_cosine_matches_dense_oracle(small):
    sims = itemknn_similarities(small)
    assert np.allclose(sims.sims.toarray(), dense_cosine(small), atol=1e-15)


def test_cosine_symmetric_zero_diagonal():
    ds = clustered_dataset(seed=1, num_users=40, num_items=200, num_clusters=8)
    S = itemknn_similarities(ds).sims.toarray()
    assert np.array_equal(S, S.T)
    assert np.all(np.diag(S) == 0)
    assert np.allclose(S, dense_cosine(ds), atol=1e-14)


def test_hand_similarity(small):
    # items 1 and 2 co-occur twice; counts 2 and 3
    assert itemknn_similarities(small)[1, 2] == pytest.approx(2 / np.sqrt(6))


def test_predict_is_sum_over_history(small):
    sims = itemknn_similarities(small)
    S = dense_cosine(small)
    assert itemknn_predict(sims, small, 0, 4) == pytest.approx(S[4, [0, 1, 2]].sum())
    assert itemknn_predict(sims, small, 0, 1) == pytest.approx(S[1, [0, 2]].sum())


def test_score_fn_linear_in_history(small):
    fn = itemknn_score_fn(itemknn_similarities(small))
    cands = np.array([3, 4, 5])
    both = fn(0, [0, 1], cands)
    assert np.allclose(both, fn(0, [0], cands) + fn(0, [1], cands))


def test_score_fn_excludes_candidate_from_history(small):
    sims = itemknn_similarities(small)
    fn = itemknn_score_fn(sims)
    got = fn(0, small.histories[0], np.array([1, 3]))
    assert got[0] == pytest.approx(itemknn_predict(sims, small, 0, 1))


def test_neighbor_cutoff_keeps_largest(small):
    full = itemknn_similarities(small).sims.toarray()
    top = itemknn_similarities(small, neighbors=1).sims.toarray()
    for i in range(6):
        if full[i].any():
            assert top[i, np.argmax(full[i])] == full[i].max()
    assert np.array_equal(top, top.T)
    assert np.all((top == 0) | (top == full))


def test_knn_beats_pop_on_clustered_data():
    ds = clustered_dataset(seed=5, num_users=200, num_items=400, num_clusters=20)
    knn = evaluate(itemknn_score_fn(itemknn_similarities(ds)), ds).mean_ndcg
    pop = evaluate(pop_score_fn(pop_scores(ds)), ds).mean_ndcg
    assert knn > pop


def test_identical_and_disjoint_user_sets():
    ds = Dataset(3, 4, [np.array([0, 1]), np.array([0, 1]), np.array([2])])
    sims = itemknn_similarities(ds)
    assert sims[0, 1] == pytest.approx(1.0)
    assert sims[0, 2] == 0.0
    assert (0, 2) not in set(zip(*sims.sims.nonzero()))


def test_cosine_bounded():
    ds = clustered_dataset(seed=2, num_users=80, num_items=300, num_clusters=8)
    assert itemknn_similarities(ds).sims.data.max() <= 1 + 1e-12


def test_predict_edge_cases(small):
    sims = itemknn_similarities(small)
    empty = Dataset(1, 6, [np.array([], dtype=np.int64)])
    assert itemknn_predict(itemknn_similarities(empty), empty, 0, 3) == 0.0
    single = Dataset(1, 6, [np.array([2])])
    assert itemknn_predict(sims, single, 0, 1) == sims[1, 2]


def test_pop_max_is_user_count():
    ds = Dataset(3, 4, [np.array([0, 1]), np.array([0]), np.array([0, 2])])
    assert pop_scores(ds)[0] == 3 and pop_scores(ds)[3] == 0
