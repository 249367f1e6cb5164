import numpy as np
import pytest

from flagfed import kmodes
from flagfed.data import SynthSpec, generate_synthetic
from flagfed.errors import ConfigurationError, DimensionError

from conftest import best_matching_purity


@pytest.mark.parametrize(
    "x, y, expected",
    [((1, 0, 1, 1), (1, 1, 1, 0), 2), ((1, 0, 1), (1, 0, 1), 0), ((0, 0), (1, 1), 2)],
)
def test_dissimilarity(x, y, expected):
    assert kmodes.dissimilarity(x, y) == expected


def test_dissimilarity_length_mismatch():
    with pytest.raises(DimensionError):
        kmodes.dissimilarity((1, 0), (1, 0, 1))


def test_distance_matrix_matches_pairwise():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, (30, 9))
    c = rng.integers(0, 2, (4, 9))
    d = kmodes.distance_matrix(a, c)
    for i in range(30):
        for j in range(4):
            assert d[i, j] == kmodes.dissimilarity(a[i], c[j])


def test_two_separable_groups():
    labels = np.array([[1, 1, 0, 0]] * 3 + [[0, 0, 1, 1]] * 3)
    model, assign = kmodes.fit(labels, 2, seed=0)
    assert model.total_dissimilarity == 0
    assert len(set(assign[:3])) == 1 and len(set(assign[3:])) == 1
    assert assign[0] != assign[3]


def test_k_equals_n_gives_singletons():
    labels = np.unique(np.random.default_rng(1).integers(0, 2, (12, 6)), axis=0)
    model, assign = kmodes.fit(labels, len(labels), seed=4)
    assert model.total_dissimilarity == 0
    assert sorted(assign.tolist()) == list(range(len(labels)))


@pytest.mark.parametrize("k", [0, 7])
def test_bad_k(k):
    with pytest.raises(ConfigurationError):
        kmodes.fit(np.ones((6, 3)), k)


def test_bad_max_iter():
    with pytest.raises(ConfigurationError):
        kmodes.fit(np.ones((6, 3)), 2, max_iter=0)


@pytest.mark.parametrize("init", ["spread", "uniform"])
def test_recovers_planted_themes(init):
    ds = generate_synthetic(SynthSpec(n_samples=600, n_labels=12, n_features=4, n_themes=3, theme_overlap=0.0,
                                      label_density=3, seed=21))
    _, assign = kmodes.fit(ds.labels, 3, seed=21, init=init)
    assert best_matching_purity(assign, ds.themes) == 1.0


def test_transform_reproduces_fit_and_is_pure():
    ds = generate_synthetic(SynthSpec(n_samples=400, n_labels=12, n_themes=3, seed=2))
    model, assign = kmodes.fit(ds.labels, 4, seed=2)
    centers_before = model.centers.copy()
    np.testing.assert_array_equal(kmodes.transform(model, ds.labels), assign)
    np.testing.assert_array_equal(kmodes.transform(model, ds.labels), assign)
    np.testing.assert_array_equal(model.centers, centers_before)


def test_transform_center_row_and_tie_break():
    centers = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [0, 1, 1, 0]], dtype=np.uint8)
    model = kmodes.KModesModel(3, centers, 0, 0)
    assert kmodes.transform(model, centers).tolist() == [0, 1, 2]
    # (1,0,1,0) is at distance 2 from every center: lowest id wins
    assert kmodes.transform(model, [[1, 0, 1, 0]]).tolist() == [0]
    # (0,1,0,1) is at distance 2 from centers 0 and 1, 4 from center 2
    assert kmodes.transform(model, [[0, 1, 0, 1]]).tolist() == [0]


def test_transform_dimension_mismatch():
    model, _ = kmodes.fit(np.eye(4, dtype=np.uint8), 2)
    with pytest.raises(DimensionError):
        kmodes.transform(model, np.ones((2, 5)))


def test_mode_tie_breaks_toward_one():
    labels = np.array([[1, 0], [0, 0], [0, 1], [0, 1]])
    model, assign = kmodes.fit(labels, 1, init_centers=[[0, 0]])
    # column 0: one of four is 1 -> 0; column 1: two of four -> tie -> 1
    assert model.centers.tolist() == [[0, 1]]


def test_empty_cluster_is_reseeded():
    labels = np.array([[1, 1, 1, 1]] * 4 + [[0, 0, 0, 0]] * 2 + [[1, 1, 0, 0]] * 2)
    # identical initial centers leave cluster 1 empty after the first assignment
    model, assign = kmodes.fit(labels, 2, init_centers=[[1, 1, 1, 1], [1, 1, 1, 1]])
    assert set(assign.tolist()) == {0, 1}
    assert list(model.cost_history) == sorted(model.cost_history, reverse=True)


def test_objective_monotone_and_bounded_iterations():
    rng = np.random.default_rng(5)
    for trial in range(20):
        labels = rng.integers(0, 2, (rng.integers(5, 80), rng.integers(1, 10)))
        k = int(rng.integers(1, min(6, len(labels)) + 1))
        max_iter = int(rng.integers(1, 6))
        model, assign = kmodes.fit(labels, k, seed=trial, max_iter=max_iter, n_init=2)
        hist = model.cost_history
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert model.total_dissimilarity <= hist[-1]
        assert 1 <= model.iterations_run <= max_iter
        assert assign.min() >= 0 and assign.max() < k
        assert set(np.unique(model.centers)) <= {0, 1}


def test_deterministic_given_seed():
    labels = np.random.default_rng(3).integers(0, 2, (200, 10))
    m1, a1 = kmodes.fit(labels, 5, seed=9)
    m2, a2 = kmodes.fit(labels, 5, seed=9)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(m1.centers, m2.centers)


def test_row_permutation_equivariance_with_injected_centers():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 2, (120, 8))
    init = labels[[3, 50, 90]]
    _, assign = kmodes.fit(labels, 3, init_centers=init)
    perm = rng.permutation(120)
    _, assign_p = kmodes.fit(labels[perm], 3, init_centers=init)
    np.testing.assert_array_equal(assign_p, assign[perm])


def test_unknown_init():
    with pytest.raises(ConfigurationError):
        kmodes.fit(np.eye(3), 2, init="cao")
