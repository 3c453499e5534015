import numpy as np
import pytest
from scipy.stats import chisquare

from treecast import broadcast, chains, exact, trees
from treecast.errors import DomainError


def test_depth_zero_is_root_only():
    t = trees.build(2, 0)
    roots, leaves = broadcast.sample_leaves(t, chains.example_chain(), [0.0, 1.0, 0.0], 50, seed=1)
    assert leaves.shape == (50, 1)
    assert (leaves[:, 0] == 1).all() and (roots == 1).all()


def test_sample_broadcast_labels_follow_rows():
    t = trees.build(3, 3)
    M = chains.example_chain()
    s = broadcast.sample_broadcast(t, M, seed=4)
    assert s.labels.shape == (t.n_vertices,)
    for v in range(1, t.n_vertices):
        assert M.rows[s.labels[t.parent(v)], s.labels[v]] > 0
    assert (s.leaf_view == s.labels[t.first_leaf:]).all()


def test_rank_one_leaves_ignore_root():
    t = trees.build(2, 2)
    M = chains.validate([[0.2, 0.8], [0.2, 0.8]])
    roots, leaves = broadcast.sample_leaves(t, M, None, 40_000, seed=2)
    for r in (0, 1):
        freq = (leaves[roots == r] == 0).mean()
        assert abs(freq - 0.2) < 0.01


def test_leaf_marginal_matches_exact():
    t = trees.build(2, 2)
    M = chains.example_chain()
    _, leaves = broadcast.sample_leaves(t, M, None, 100_000, seed=3)
    exp = exact.leaf_subset_law(t, M, None, [0]).table.sum(axis=0)
    obs = np.bincount(leaves[:, 0], minlength=3)
    keep = exp > 0
    assert chisquare(obs[keep], exp[keep] * obs.sum()).pvalue > 1e-3


def test_three_leaf_joint_within_tv():
    t = trees.build(2, 3)
    M = chains.example_chain()
    S = [0, 1, 5]
    _, leaves = broadcast.sample_leaves(t, M, None, 1_000_000, seed=5, eps=0.1)
    idx = np.ravel_multi_index(leaves[:, S].T.astype(np.int64), (3, 3, 3))
    emp = np.bincount(idx, minlength=27) / len(idx)
    law = exact.leaf_subset_law(t, M, None, S, 0.1).table.sum(axis=0).reshape(-1)
    assert 0.5 * np.abs(emp - law).sum() < 0.01


def test_noise_zero_is_identity():
    x = np.arange(30) % 3
    out = broadcast.apply_noise(x, 0.0, 3, seed=0)
    assert (out.values == x).all() and not out.noise_mask.any()


def test_noise_near_one_masks_everything():
    out = broadcast.apply_noise(np.zeros(10_000, dtype=int), 1 - 1e-9, 3, seed=0)
    assert out.noise_mask.mean() > 0.999


def test_noise_density():
    out = broadcast.apply_noise(np.zeros(100_000, dtype=int), 0.3, 3, seed=0)
    assert abs(out.noise_mask.mean() - 0.3) < 0.01
    # resampling is uniform and may keep the original value
    assert abs((out.values[out.noise_mask] == 0).mean() - 1 / 3) < 0.01


def test_noise_domain():
    with pytest.raises(DomainError):
        broadcast.apply_noise([0, 1], 1.0, 2)
    with pytest.raises(DomainError):
        broadcast.apply_noise([0, 1], -0.1, 2)


def test_prior_validation():
    with pytest.raises(DomainError):
        broadcast.as_prior([0.5, 0.6], 2)
    np.testing.assert_allclose(broadcast.biased_prior(1, 3), [1 / 9, 7 / 9, 1 / 9])


def test_repeated_empty():
    p = broadcast.RepeatedParams(2, 2, 0, 0.0, chains.example_chain())
    ds = broadcast.sample_repeated(p, seed=1)
    assert ds.samples.shape == (0, 4)
    assert 0 <= ds.y_star < 3


def test_repeated_root_bias():
    t = trees.build(2, 1)
    M = chains.example_chain()
    roots, _ = broadcast.sample_leaves(t, M, broadcast.biased_prior(2, 3), 100_000, seed=8)
    assert abs((roots == 2).mean() - 7 / 9) < 0.01


def test_repeated_is_shuffled_consistently():
    M = chains.validate(np.eye(3) * 0.98 + 0.02 / 3)
    p = broadcast.RepeatedParams(2, 2, 200, 0.0, M)
    ds = broadcast.sample_repeated(p, seed=9)
    in_tree = ds.tau.to_tree(ds.samples)
    # a near-identity channel makes siblings agree far more often than cousins
    assert (in_tree[:, 0] == in_tree[:, 1]).mean() > 0.9


def test_repeated_deterministic(tmp_path):
    p = broadcast.RepeatedParams(2, 2, 5, 0.1, chains.example_chain())
    a = broadcast.sample_repeated(p, seed=12)
    b = broadcast.sample_repeated(p, seed=12)
    broadcast.write_dataset(a, tmp_path / "a.jsonl")
    broadcast.write_dataset(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl.secret.json").read_bytes() == (tmp_path / "b.jsonl.secret.json").read_bytes()


def test_dataset_roundtrip(tmp_path):
    p = broadcast.RepeatedParams(3, 2, 4, 0.05, chains.example_chain())
    ds = broadcast.sample_repeated(p, seed=1)
    broadcast.write_dataset(ds, tmp_path / "d.jsonl")
    back = broadcast.read_dataset(tmp_path / "d.jsonl")
    assert (back.samples == ds.samples).all()
    assert back.tau == ds.tau and back.y_star == ds.y_star
    assert back.params == ds.params


def test_substreams_differ():
    a = broadcast.substream(1, 0).random(4)
    b = broadcast.substream(1, 1).random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, broadcast.substream(1, 0).random(4))
