import csv
import json
import math

import numpy as np
import pytest

from flagfed.data import SynthSpec, generate_synthetic, theme_groups
from flagfed.errors import ConfigurationError, DegenerateDistributionError, DimensionError
from flagfed.partition import (
    ClientShard,
    cmda_split,
    heterogeneity_report,
    kl_divergence,
    ldist,
    random_split,
)

from conftest import make_dataset, row_digests

# scalar oracle: sum over i of p_i log(p_i/q_i), averaged both ways, on
# p=[1,0], q=[0,1] smoothed with 1e-6 and renormalized (math.log, plain loops)
KL_ONE_HOT_ORACLE = 13.81548392699592


def test_ldist_examples():
    labels = np.array([[1, 1, 0], [1, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(ldist(labels), [0.5, 0.5, 0.0])
    np.testing.assert_array_equal(ldist([[0, 0, 1, 0]]), [0, 0, 1, 0])
    np.testing.assert_allclose(ldist(np.ones((5, 4))), np.full(4, 0.25))


def test_ldist_all_zero():
    with pytest.raises(DegenerateDistributionError):
        ldist(np.zeros((3, 2)))


def test_kl_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(KL_ONE_HOT_ORACLE, rel=1e-12)


def test_kl_matches_scalar_formula():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        if rng.random() < 0.3:
            p[rng.integers(n)] = 0.0
            p /= p.sum()
        ps = [(v + 1e-6) / (1 + n * 1e-6) for v in p]
        qs = [(v + 1e-6) / (1 + n * 1e-6) for v in q]
        fwd = sum(a * math.log(a / b) for a, b in zip(ps, qs))
        rev = sum(b * math.log(b / a) for a, b in zip(ps, qs))
        assert kl_divergence(p, q) == pytest.approx((fwd + rev) / 2, rel=1e-9, abs=1e-15)
        assert kl_divergence(p, q) == kl_divergence(q, p)
        assert kl_divergence(p, q) >= 0


def test_kl_errors():
    with pytest.raises(DimensionError):
        kl_divergence([1.0], [0.5, 0.5])
    with pytest.raises(ConfigurationError):
        kl_divergence([0.5, 0.5], [0.5, 0.5], epsilon=0)
    with pytest.raises(ConfigurationError):
        kl_divergence([0.5, 0.6], [0.5, 0.5])


def test_report_identical_shards():
    ds = make_dataset([[1, 0, 1], [0, 1, 1]])
    shards = [ClientShard(0, ds, ds), ClientShard(1, ds, ds)]
    rep = heterogeneity_report(shards)
    assert rep.total_kl == 0.0
    assert not rep.kl_matrix.any()


def test_report_degenerate_shard_named():
    good = make_dataset([[1, 0]])
    bad = make_dataset([[0, 0]])
    with pytest.raises(DegenerateDistributionError, match="client 1"):
        heterogeneity_report([ClientShard(0, good, good), ClientShard(1, bad, bad)])


def _check_report(rep, shards):
    n = len(shards)
    assert rep.client_sizes.tolist() == [s.train.n_samples for s in shards]
    np.testing.assert_allclose(rep.ldist.sum(axis=1), 1.0, atol=1e-9)
    assert ((rep.ldist >= 0) & (rep.ldist <= 1)).all()
    np.testing.assert_array_equal(rep.kl_matrix, rep.kl_matrix.T)
    assert not np.diag(rep.kl_matrix).any()
    assert (rep.kl_matrix >= 0).all()
    assert rep.total_kl == pytest.approx(rep.kl_matrix[np.triu_indices(n, 1)].mean(), rel=1e-15)


def test_two_disjoint_themes_split_cleanly(planted):
    ds = generate_synthetic(SynthSpec(n_samples=200, n_labels=8, n_themes=2, theme_overlap=0.0, seed=4))
    val = generate_synthetic(SynthSpec(n_samples=80, n_labels=8, n_themes=2, theme_overlap=0.0, seed=4), 1)
    shards = cmda_split(ds, val, 2, seed=0)
    for s in shards:
        assert len(set(s.train.themes.tolist())) == 1
        assert len(set(s.val.themes.tolist())) == 1


@pytest.mark.parametrize("split", [cmda_split, random_split])
def test_single_client_rejected(split, planted):
    with pytest.raises(ConfigurationError):
        split(*planted, 1)


@pytest.mark.parametrize("split", [cmda_split, random_split])
def test_too_many_clients(split):
    ds = make_dataset([[1, 0], [0, 1], [1, 1]])
    with pytest.raises(ConfigurationError):
        split(ds, ds, 4)


def test_label_mismatch():
    a = make_dataset([[1, 0], [0, 1]])
    b = make_dataset([[1, 0, 1], [0, 1, 1]])
    with pytest.raises(DimensionError):
        cmda_split(a, b, 2)


@pytest.mark.parametrize("split", [cmda_split, random_split])
def test_conservation_and_nonempty(split, planted):
    train, val = planted
    shards = split(train, val, 4, seed=3)
    assert all(s.train.n_samples >= 1 and s.val.n_samples >= 1 for s in shards)
    assert [s.client_id for s in shards] == [0, 1, 2, 3]
    from flagfed.data import MultiLabelDataset

    assert row_digests(MultiLabelDataset.concat([s.train for s in shards])) == row_digests(train)
    assert row_digests(MultiLabelDataset.concat([s.val for s in shards])) == row_digests(val)
    _check_report(heterogeneity_report(shards), shards)


def test_random_split_sizes_and_determinism():
    ds = make_dataset(np.random.default_rng(0).integers(0, 2, (10000, 5)))
    shards = random_split(ds, ds, 2, seed=5)
    sizes = [s.train.n_samples for s in shards]
    assert sum(sizes) == 10000
    assert all(4500 <= s <= 5500 for s in sizes)
    again = random_split(ds, ds, 2, seed=5)
    assert all(a.train == b.train and a.val == b.val for a, b in zip(shards, again))


def test_random_split_kl_near_zero():
    spec = SynthSpec(n_samples=20000, seed=1)
    train = generate_synthetic(spec)
    shards = random_split(train, generate_synthetic(spec, 1), 10, seed=1)
    assert heterogeneity_report(shards).total_kl < 0.01


def test_val_repair_fills_empty_shard():
    # val rows all sit on center 0, so client 1's val shard needs a moved row
    train = make_dataset([[1, 1, 0, 0]] * 5 + [[0, 0, 1, 1]] * 5)
    val = make_dataset([[1, 1, 0, 0]] * 4)
    shards = cmda_split(train, val, 2, seed=0)
    assert sorted(s.val.n_samples for s in shards) == [1, 3]


def test_ten_themes_supports_match_groups():
    spec = SynthSpec(n_samples=5000, n_themes=10, theme_overlap=0.0, seed=2)
    train, val = generate_synthetic(spec), generate_synthetic(spec, 1)
    shards = cmda_split(train, val, 10, seed=2)
    groups = {frozenset(g.tolist()) for g in theme_groups(40, 10)}
    supports = {frozenset(np.flatnonzero(s.train.labels.any(axis=0)).tolist()) for s in shards}
    assert supports == groups


def test_cmda_more_skewed_than_random():
    spec = SynthSpec(n_samples=5000, seed=0)
    train, val = generate_synthetic(spec), generate_synthetic(spec, 1)
    cm = heterogeneity_report(cmda_split(train, val, 10, seed=0)).total_kl
    rnd = heterogeneity_report(random_split(train, val, 10, seed=0)).total_kl
    assert cm >= 5 * rnd


def test_report_files(tmp_path, planted):
    shards = cmda_split(*planted, 3, seed=0)
    rep = heterogeneity_report(shards)
    rep.write(tmp_path, "cmda")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary == {"total_kl": rep.total_kl, "epsilon": 1e-6, "method": "cmda"}
    with open(tmp_path / "kl.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["client_id", "0", "1", "2"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2"]
    np.testing.assert_array_equal(np.array([[float(v) for v in r[1:]] for r in rows[1:]]), rep.kl_matrix)
    with open(tmp_path / "sizes.csv", newline="") as fh:
        assert list(csv.reader(fh))[1:] == [[str(i), str(n)] for i, n in enumerate(rep.client_sizes)]
    with open(tmp_path / "ldist.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows[0]) == 1 + planted[0].n_labels
    assert b"\r" not in (tmp_path / "ldist.csv").read_bytes()
