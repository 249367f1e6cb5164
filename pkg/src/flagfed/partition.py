"""Client data allocation and label-skew diagnostics.

Two partitioners are provided: clustering-based allocation (k-modes over
label vectors, one cluster per client, validation rows placed with the
training centers) and uniform random assignment. Both guarantee every
client a non-empty train and validation shard by moving the nearest row
from a client that can spare one.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kmodes
from .data import MultiLabelDataset, as_label_matrix
from .errors import ConfigurationError, DegenerateDistributionError, DimensionError

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True, eq=False)
class ClientShard:
    client_id: int
    train: MultiLabelDataset
    val: MultiLabelDataset
    # row indices into the source train/val datasets
    train_index: np.ndarray | None = None
    val_index: np.ndarray | None = None


def _check_inputs(train, val, n_clients):
    if n_clients < 2:
        raise ConfigurationError(f"federation needs at least 2 clients, got {n_clients}")
    if train.n_labels != val.n_labels:
        raise DimensionError(f"train has {train.n_labels} labels, val has {val.n_labels}")
    if train.n_features != val.n_features:
        raise DimensionError(f"train has {train.n_features} features, val has {val.n_features}")
    if n_clients > train.n_samples:
        raise ConfigurationError(f"n_clients ({n_clients}) exceeds train rows ({train.n_samples})")
    if n_clients > val.n_samples:
        raise ConfigurationError(f"n_clients ({n_clients}) exceeds val rows ({val.n_samples})")


def repair_empty(assign: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Give every empty client the single nearest row from a client holding >= 2.

    Nearness is mismatch count to the empty client's center; ties go to the
    lowest row index. Clients are repaired in id order.
    """
    assign = assign.copy()
    k = centers.shape[0]
    sizes = np.bincount(assign, minlength=k)
    for c in np.flatnonzero(sizes == 0):
        donors = sizes[assign] >= 2
        if not donors.any():
            raise ConfigurationError("not enough rows to give every client one")
        dist = kmodes.distance_matrix(labels, centers[c : c + 1])[:, 0]
        dist = np.where(donors, dist, np.iinfo(np.int64).max)
        row = int(dist.argmin())
        sizes[assign[row]] -= 1
        assign[row] = c
        sizes[c] += 1
    return assign


def _shards(train, val, train_assign, val_assign, n_clients):
    shards = []
    for c in range(n_clients):
        ti = np.flatnonzero(train_assign == c)
        vi = np.flatnonzero(val_assign == c)
        shards.append(ClientShard(c, train.subset(ti), val.subset(vi), ti, vi))
    return shards


def cmda_split(train: MultiLabelDataset, val: MultiLabelDataset, n_clients: int, seed=0,
               max_iter: int = kmodes.DEFAULT_MAX_ITER) -> list[ClientShard]:
    """Clustering-based allocation: fit k-modes on train labels with one
    cluster per client, then place validation rows with the same centers."""
    _check_inputs(train, val, n_clients)
    model, train_assign = kmodes.fit(train.labels, n_clients, seed=seed, max_iter=max_iter)
    val_assign = kmodes.transform(model, val.labels)
    train_assign = repair_empty(train_assign, train.labels, model.centers)
    val_assign = repair_empty(val_assign, val.labels, model.centers)
    return _shards(train, val, train_assign, val_assign, n_clients)


def random_split(train: MultiLabelDataset, val: MultiLabelDataset, n_clients: int, seed=0) -> list[ClientShard]:
    """Assign every row independently and uniformly to a client."""
    _check_inputs(train, val, n_clients)
    rng = np.random.default_rng(seed)
    train_assign = rng.integers(n_clients, size=train.n_samples)
    val_assign = rng.integers(n_clients, size=val.n_samples)
    # repair target: the label mode of each client's (possibly empty) train rows
    centers, _ = kmodes._modes(train.labels, train_assign, n_clients)
    train_assign = repair_empty(train_assign, train.labels, centers)
    centers, _ = kmodes._modes(train.labels, train_assign, n_clients)
    val_assign = repair_empty(val_assign, val.labels, centers)
    return _shards(train, val, train_assign, val_assign, n_clients)


PARTITIONERS = {"cmda": cmda_split, "random": random_split}


def ldist(shard_labels) -> np.ndarray:
    """Per-label positive counts normalized by the total positive count."""
    labels = as_label_matrix(shard_labels)
    counts = labels.sum(axis=0, dtype=np.int64)
    total = counts.sum()
    if total == 0:
        raise DegenerateDistributionError("label matrix has no positive entries")
    return counts / total


def _smooth(p, epsilon):
    p = p + epsilon
    return p / p.sum()


def kl_divergence(p, q, epsilon: float = DEFAULT_EPSILON) -> float:
    """Symmetrized KL divergence in nats between smoothed distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"distributions must be 1-D with equal length, got {p.shape} and {q.shape}")
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
    for name, v in (("p", p), ("q", q)):
        if (v < 0).any() or abs(v.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"{name} is not a probability vector")
    ps, qs = _smooth(p, epsilon), _smooth(q, epsilon)
    # (KL(p||q) + KL(q||p)) / 2, summed termwise so each term is >= 0
    return float(np.sum((ps - qs) * (np.log(ps) - np.log(qs)))) / 2.0


@dataclass(frozen=True, eq=False)
class HeterogeneityReport:
    client_sizes: np.ndarray
    ldist: np.ndarray
    kl_matrix: np.ndarray
    total_kl: float
    epsilon: float = DEFAULT_EPSILON

    def write(self, out_dir, method: str) -> None:
        """Write sizes.csv, ldist.csv, kl.csv and summary.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n_clients = len(self.client_sizes)
        with open(out / "sizes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["client_id", "count"])
            for c, size in enumerate(self.client_sizes):
                w.writerow([c, int(size)])
        with open(out / "ldist.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["client_id"] + [f"label_{j}" for j in range(self.ldist.shape[1])])
            for c, row in enumerate(self.ldist):
                w.writerow([c] + [repr(float(v)) for v in row])
        with open(out / "kl.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["client_id"] + list(range(n_clients)))
            for c, row in enumerate(self.kl_matrix):
                w.writerow([c] + [repr(float(v)) for v in row])
        summary = {"total_kl": float(self.total_kl), "epsilon": float(self.epsilon), "method": method}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def heterogeneity_report(shards, epsilon: float = DEFAULT_EPSILON) -> HeterogeneityReport:
    if len(shards) < 2:
        raise ConfigurationError(f"need at least 2 shards, got {len(shards)}")
    dists = []
    for shard in shards:
        try:
            dists.append(ldist(shard.train.labels))
        except DegenerateDistributionError:
            raise DegenerateDistributionError(f"client {shard.client_id} has no positive labels") from None
    n = len(shards)
    kl = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            kl[i, j] = kl[j, i] = kl_divergence(dists[i], dists[j], epsilon)
    total = float(kl[np.triu_indices(n, k=1)].mean())
    return HeterogeneityReport(
        client_sizes=np.array([s.train.n_samples for s in shards], dtype=np.int64),
        ldist=np.vstack(dists),
        kl_matrix=kl,
        total_kl=total,
        epsilon=epsilon,
    )
