import hashlib
import itertools

import numpy as np
import pytest

from flagfed.data import MultiLabelDataset, SynthSpec, generate_synthetic


def make_dataset(labels, n_features=3, seed=0):
    labels = np.asarray(labels, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    names = tuple(f"l{j}" for j in range(labels.shape[1]))
    return MultiLabelDataset(rng.standard_normal((labels.shape[0], n_features)), labels, names)


def best_matching_purity(assign, truth):
    """Fraction of rows agreeing with ``truth`` under the best relabeling,
    by exhaustive search over bijections."""
    k = int(max(assign.max(), truth.max())) + 1
    best = 0.0
    for perm in itertools.permutations(range(k)):
        best = max(best, float(np.mean(np.asarray(perm)[assign] == truth)))
    return best


def row_digests(ds):
    return sorted(
        hashlib.sha256(x.tobytes() + y.tobytes()).hexdigest() for x, y in zip(ds.features, ds.labels)
    )


@pytest.fixture(scope="session")
def planted():
    """Small planted-theme train/val pair with disjoint themes."""
    spec = SynthSpec(n_samples=800, n_labels=12, n_features=16, n_themes=3, theme_overlap=0.0,
                     label_density=3, noise_std=0.2, seed=11)
    from dataclasses import replace

    return generate_synthetic(spec, 0), generate_synthetic(replace(spec, n_samples=300), 1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
