"""k-modes clustering of binary label vectors.

Dissimilarity is the mismatch (Hamming) count. Centers are coordinate-wise
modes with 0/1 ties resolved toward 1; nearest-center ties go to the lowest
cluster id. A cluster left empty after assignment is reseeded with the row
that is currently farthest from its own center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import as_label_matrix
from .errors import ConfigurationError, DimensionError

DEFAULT_MAX_ITER = 100
DEFAULT_N_INIT = 20
INIT_METHODS = ("spread", "uniform")


@dataclass(frozen=True, eq=False)
class KModesModel:
    k: int
    centers: np.ndarray
    iterations_run: int
    total_dissimilarity: int
    # objective after each (assign, update) iteration
    cost_history: tuple[int, ...] = ()

    @property
    def n_labels(self) -> int:
        return self.centers.shape[1]


def dissimilarity(x, y) -> int:
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"vectors must be 1-D with equal length, got {x.shape} and {y.shape}")
    return int(np.count_nonzero(x != y))


def distance_matrix(labels: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """``N x k`` mismatch counts between binary rows and binary centers."""
    a = labels.astype(np.float64)
    c = centers.astype(np.float64)
    # float64 BLAS is exact here: every partial sum is an integer <= L
    d = a.sum(axis=1)[:, None] + c.sum(axis=1)[None, :] - 2.0 * (a @ c.T)
    return d.astype(np.int64)


def _nearest(labels, centers):
    dist = distance_matrix(labels, centers)
    # argmin returns the first minimum, i.e. the lowest cluster id
    assign = dist.argmin(axis=1)
    return assign, dist[np.arange(len(assign)), assign]


def _modes(labels, assign, k):
    onehot = np.zeros((k, labels.shape[0]))
    onehot[assign, np.arange(labels.shape[0])] = 1.0
    counts = (onehot @ labels.astype(np.float64)).astype(np.int64)
    sizes = np.bincount(assign, minlength=k)
    centers = (2 * counts >= sizes[:, None]).astype(np.uint8)
    return centers, sizes


def _cost(labels, assign, centers):
    return int(np.count_nonzero(labels != centers[assign]))


def _fit_once(labels, k, centers, max_iter):
    n = labels.shape[0]
    assign, _ = _nearest(labels, centers)
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        centers, sizes = _modes(labels, assign, k)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            own = np.count_nonzero(labels != centers[assign], axis=1)
            # farthest rows first, lowest index among equals
            order = np.lexsort((np.arange(n), -own))
            for cluster, row in zip(empty, order):
                centers[cluster] = labels[row]
        cost = _cost(labels, assign, centers)
        if history and cost > history[-1]:
            raise AssertionError(f"k-modes objective increased: {history[-1]} -> {cost}")
        history.append(cost)
        new_assign, _ = _nearest(labels, centers)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    centers.flags.writeable = False
    model = KModesModel(
        k=k,
        centers=centers,
        iterations_run=iterations,
        total_dissimilarity=_cost(labels, assign, centers),
        cost_history=tuple(history),
    )
    return model, assign


def _spread_rows(labels, k, rng):
    """Pick ``k`` distinct row indices: the first uniformly, each next one with
    probability proportional to its squared mismatch count to the nearest
    row already picked. Falls back to uniform among unpicked rows once every
    remaining row duplicates a picked one."""
    n = labels.shape[0]
    rows = [int(rng.integers(n))]
    nearest = distance_matrix(labels, labels[rows[0]][None, :])[:, 0]
    for _ in range(1, k):
        weight = nearest.astype(np.float64) ** 2
        weight[rows] = 0.0
        if weight.sum() == 0:
            weight = np.ones(n)
            weight[rows] = 0.0
        row = int(rng.choice(n, p=weight / weight.sum()))
        rows.append(row)
        nearest = np.minimum(nearest, distance_matrix(labels, labels[row][None, :])[:, 0])
    return np.array(rows)


def fit(labels, k: int, seed=0, max_iter: int = DEFAULT_MAX_ITER, init_centers=None,
        n_init: int = DEFAULT_N_INIT, init: str = "spread"):
    """Cluster the rows of a label matrix into ``k`` modes.

    Runs ``n_init`` seeded restarts, each initialized with ``k`` distinct
    random rows, and keeps the one with the lowest total dissimilarity
    (earliest restart on ties). ``init="spread"`` draws the rows with
    distance weighting (see ``_spread_rows``); ``init="uniform"`` draws them
    uniformly. ``init_centers`` replaces the random initialization and implies
    a single run.

    Returns ``(KModesModel, assignment)``. The assignment always equals the
    nearest-center assignment under the returned centers, so ``transform``
    on the training rows reproduces it.
    """
    labels = as_label_matrix(labels)
    n = labels.shape[0]
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if k > n:
        raise ConfigurationError(f"k ({k}) exceeds the number of rows ({n})")
    if max_iter < 1:
        raise ConfigurationError(f"max_iter must be >= 1, got {max_iter}")
    if n_init < 1:
        raise ConfigurationError(f"n_init must be >= 1, got {n_init}")

    if init_centers is not None:
        centers = as_label_matrix(init_centers).copy()
        if centers.shape != (k, labels.shape[1]):
            raise DimensionError(f"init_centers must have shape {(k, labels.shape[1])}, got {centers.shape}")
        return _fit_once(labels, k, centers, max_iter)

    if init not in INIT_METHODS:
        raise ConfigurationError(f"unknown init {init!r}; choose from {INIT_METHODS}")
    best = None
    for run in range(n_init):
        rng = np.random.default_rng([seed, run])
        if init == "uniform":
            rows = rng.choice(n, size=k, replace=False)
        else:
            rows = _spread_rows(labels, k, rng)
        result = _fit_once(labels, k, labels[rows].copy(), max_iter)
        if best is None or result[0].total_dissimilarity < best[0].total_dissimilarity:
            best = result
    return best


def transform(model: KModesModel, labels) -> np.ndarray:
    labels = as_label_matrix(labels)
    if labels.shape[1] != model.n_labels:
        raise DimensionError(f"labels have {labels.shape[1]} columns, model expects {model.n_labels}")
    return _nearest(labels, model.centers)[0]
