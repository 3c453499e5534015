import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast import broadcast, chains, exact, trees
from treecast.errors import SizeOverflow

from conftest import EXAMPLE_ROWS, brute_joint, brute_subset_mi

# Frozen values computed with the itertools oracle in conftest and an
# independent least-squares projection over the full one-hot basis.
MI_ALL_LEAVES_DEPTH1 = 0.6816102690529531
BSC08_DEPTH2_DEGREE1 = 0.40811546199427784
EXAMPLE_DEPTH2_DEGREE2 = 0.24618298195866534
EXAMPLE_DEPTH2_DEGREE4 = (0.2698090711334598, 0.06940201221432934, 0.24957544684366303)
EXAMPLE_DEPTH2_DEGREE2_NOISY = 0.11750882895436224  # eps = 0.3
BSC05_DEGREE1 = (0.31622776601683794, 0.21320071635561016, 0.14744195615489716)  # depth 1..3
# Full-degree single-sample feature 1(x = (0, 2, 0, 2)), repeated model d=2, depth 2;
# factorized and full-enumeration routes agree.
REPEATED_FULL_FEATURE = (0.0013744212962962978, -0.00014467592592592492, -0.0012297453703703713)


def test_empty_subset_law_is_prior():
    t = trees.build(2, 2)
    nu = [0.2, 0.3, 0.5]
    law = exact.leaf_subset_law(t, chains.example_chain(), nu, [])
    np.testing.assert_allclose(law.table, nu)


@pytest.mark.parametrize("eps", [0.0, 0.25])
def test_single_leaf_marginal(eps):
    t = trees.build(2, 3)
    M = chains.example_chain()
    nu = np.array([0.6, 0.3, 0.1])
    law = exact.leaf_subset_law(t, M, nu, [5], eps)
    expected = nu @ np.linalg.matrix_power(M.rows, 3) @ broadcast.noise_matrix(3, eps)
    np.testing.assert_allclose(law.config_marginal(), expected, atol=1e-14)


def test_rank_one_law_factorizes():
    t = trees.build(2, 2)
    M = chains.validate([[0.1, 0.6, 0.3]] * 3)
    law = exact.leaf_subset_law(t, M, [0.5, 0.2, 0.3], [0, 2, 3], 0.1)
    flat = law.table.reshape(3, -1)
    outer = np.outer(law.root_marginal(), flat.sum(axis=0))
    assert np.max(np.abs(flat - outer)) <= 1e-12


@pytest.mark.parametrize("d,depth,eps", [(2, 2, 0.0), (2, 2, 0.2), (3, 1, 0.1), (2, 3, 0.0)])
def test_subset_laws_match_brute_force(d, depth, eps):
    t = trees.build(d, depth)
    M = chains.example_chain()
    N = t.n_leaves
    J = brute_joint(d, depth, EXAMPLE_ROWS, eps=eps).reshape((3,) + (3,) * N)
    for size in (1, 2, 3):
        for S in itertools.combinations(range(N), size):
            drop = tuple(1 + j for j in range(N) if j not in S)
            ref = J.sum(axis=drop)
            law = exact.leaf_subset_law(t, M, None, S, eps)
            assert np.max(np.abs(law.table - ref)) < 1e-14


def test_law_is_normalized_and_has_prior_marginal():
    t = trees.build(3, 2)
    nu = [0.1, 0.7, 0.2]
    law = exact.leaf_subset_law(t, chains.example_chain(), nu, [0, 4, 8], 0.05)
    assert abs(law.table.sum() - 1) < 1e-12
    np.testing.assert_allclose(law.root_marginal(), nu, atol=1e-12)
    assert (law.table >= 0).all()


def test_size_cap():
    t = trees.build(2, 4)
    with pytest.raises(SizeOverflow):
        exact.leaf_subset_law(t, chains.example_chain(), None, range(16), max_entries=1000)


def test_mi_full_depth_one_frozen():
    t = trees.build(2, 1)
    mi = exact.mutual_information_root(exact.leaf_subset_law(t, chains.example_chain(), None, [0, 1]))
    assert mi == pytest.approx(MI_ALL_LEAVES_DEPTH1, abs=1e-12)


def test_mi_independent_product_is_zero():
    table = np.outer([0.3, 0.7], [0.1, 0.2, 0.3, 0.4]).reshape(2, 2, 2)
    assert abs(exact.mutual_information_root(exact.JointLaw((0, 1), table))) < 1e-15


def test_mi_matches_brute_force_all_subsets():
    t = trees.build(2, 2)
    M = chains.example_chain()
    J = brute_joint(2, 2, EXAMPLE_ROWS, eps=0.1)
    for size in range(1, 5):
        for S in itertools.combinations(range(4), size):
            ours = exact.mutual_information_root(exact.leaf_subset_law(t, M, None, S, 0.1))
            assert ours == pytest.approx(brute_subset_mi(J, 3, 4, S), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 7), max_size=8), st.sets(st.integers(0, 7), max_size=8),
       st.sampled_from([0.0, 0.2]))
def test_mi_monotone_in_subset(a, b, eps):
    t = trees.build(2, 3)
    M = chains.example_chain()
    small = sorted(a)
    big = sorted(a | b)
    i_small = exact.mutual_information_root(exact.leaf_subset_law(t, M, None, small, eps))
    i_big = exact.mutual_information_root(exact.leaf_subset_law(t, M, None, big, eps))
    assert i_small >= -1e-12
    assert i_small <= i_big + 1e-10


def test_mi_zero_below_corrected_threshold():
    # every subset with fewer than 2^floor((depth-1)/(k-1)) leaves is independent of the root
    M = chains.example_chain()
    for depth in (1, 2, 3):
        t = trees.build(2, depth)
        bound = exact.independence_threshold(2, depth)
        for size in range(1, t.n_leaves + 1):
            if size >= bound:
                break
            for S in itertools.combinations(range(t.n_leaves), size):
                assert exact.mutual_information_root(exact.leaf_subset_law(t, M, None, S)) <= 1e-9


def test_corrected_threshold_is_tight_on_example():
    M = chains.example_chain()
    for depth in (1, 2, 3):
        t = trees.build(2, depth)
        size = int(exact.independence_threshold(2, depth))
        worst = max(exact.mutual_information_root(exact.leaf_subset_law(t, M, None, S))
                    for S in itertools.combinations(range(t.n_leaves), size))
        assert worst > 1e-3


def test_threshold_helpers():
    assert exact.paper_threshold(2, 3) == 8
    assert exact.independence_threshold(2, 3) == 4
    assert exact.independence_threshold(2, 1) == 1
    assert exact.independence_threshold(3, 5) == 4
    assert exact.independence_threshold(1, 4) == math.inf
    assert exact.independence_threshold(None, 4) == 0


def test_shift_chain_threshold_k3():
    # q=8 shift on 3-bit words (b1, b2, b3) -> (b2, b3, fresh bit): M^3 is rank one, M^2 is not
    rows = np.zeros((8, 8))
    for s in range(8):
        for r in range(2):
            rows[s, ((s << 1) & 7) | r] = 0.5
    M = chains.validate(rows)
    assert chains.rank_one_power(M) == 3
    # depth 2: bound 1, and a single leaf still carries the root's last bit
    t2 = trees.build(2, 2)
    assert exact.independence_threshold(3, 2) == 1
    assert exact.mutual_information_root(exact.leaf_subset_law(t2, M, None, [0])) > 1e-3
    # depth 3: every leaf word is built from fresh bits, so all subsets are independent
    t3 = trees.build(2, 3)
    assert exact.independence_threshold(3, 3) == 2
    for size in (1, 2, 3):
        for S in itertools.combinations(range(8), size):
            assert exact.mutual_information_root(exact.leaf_subset_law(t3, M, None, S)) <= 1e-9


@pytest.mark.parametrize("d,depth,q", [(2, 1, 4), (2, 2, 3), (3, 1, 3), (2, 2, 2), (6, 1, 2), (2, 2, 4)])
@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_bp_matches_enumeration(d, depth, q, eps):
    rng = np.random.default_rng(100 * d + 10 * depth + q)
    rows = rng.dirichlet(np.ones(q), size=q)
    rows[0] = 0
    rows[0, 0] = 1.0  # include hard zeros
    nu = rng.dirichlet(np.ones(q))
    t = trees.build(d, depth)
    J = brute_joint(d, depth, rows, nu, eps)
    px = J.sum(axis=0)
    configs = exact.all_configs(q, t.n_leaves)
    post = exact.root_posterior_bp(t, rows, nu, configs, eps)
    seen = px > 0
    ref = (J[:, seen] / px[seen]).T
    assert np.max(np.abs(post[seen] - ref)) < 1e-10
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)


def test_bp_depth_zero_returns_prior():
    t = trees.build(2, 0)
    nu = np.array([0.2, 0.8])
    post = exact.root_posterior_bp(t, chains.bsc(0.5), nu, [1], 0.0)
    np.testing.assert_allclose(post, [0.0, 1.0])


def test_bp_rank_one_returns_prior():
    t = trees.build(2, 2)
    nu = np.array([0.5, 0.3, 0.2])
    M = chains.uniform_chain(3)
    post = exact.root_posterior_bp(t, M, nu, exact.all_configs(3, 4), 0.1)
    np.testing.assert_allclose(post, np.tile(nu, (81, 1)), atol=1e-14)


def test_tv_gap_rank_one_and_pure_noise():
    t = trees.build(2, 2)
    assert exact.tv_reconstruction_gap(t, chains.uniform_chain(3)) < 1e-15
    assert exact.tv_reconstruction_gap(t, chains.example_chain(), eps=1.0) < 1e-15


def test_tv_gap_counts_decrease_below_threshold():
    M = chains.bsc(0.5)  # d theta^2 = 0.5 < 1
    gaps = [exact.tv_reconstruction_gap(trees.build(2, depth), M, statistic="counts") for depth in (1, 2, 3, 4)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_tv_gap_full_vs_counts():
    t = trees.build(2, 2)
    M = chains.example_chain()
    full = exact.tv_reconstruction_gap(t, M, 0.1)
    counts = exact.tv_reconstruction_gap(t, M, 0.1, statistic="counts")
    assert 0 <= counts <= full + 1e-15 <= 1


def test_pair_moment_sibling_contraction():
    t = trees.build(2, 4)
    M = chains.example_chain()
    phi = np.array([1.0, -1.0, 1.0])
    u, v = t.leaf_vertex(0), t.leaf_vertex(1)
    P = exact.pair_moment(t, M, None, u, v)
    assert phi @ P @ phi == pytest.approx(0.5, abs=1e-14)


def test_pair_moment_non_sibling_contraction_vanishes():
    t = trees.build(2, 3)
    M = chains.example_chain()
    phi = np.array([1.0, -1.0, 1.0])
    for j in range(2, t.n_leaves):
        P = exact.pair_moment(t, M, None, t.leaf_vertex(0), t.leaf_vertex(j))
        assert abs(phi @ P @ phi) < 1e-14


@pytest.mark.parametrize("M", [chains.example_chain(), chains.bsc(0.8)])
def test_pair_moment_matches_dp_all_pairs(M):
    for d, depth in [(2, 3), (3, 2)]:
        t = trees.build(d, depth)
        nu = np.linspace(1, 2, M.q)
        nu /= nu.sum()
        for u in range(t.n_vertices):
            for v in range(u + 1, t.n_vertices):
                assert exact.lemma_identity_residual(t, M, nu, u, v) <= 1e-12


def test_marginal_lower_bound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M = chains.validate(rng.dirichlet(np.ones(3), size=3))
        nu = rng.dirichlet(np.ones(3))
        t = trees.build(2, 3)
        bound = exact.marginal_lower_bound(M, nu)
        lowest = min(exact.vertex_marginal(t, M, nu, v).min() for v in range(t.n_vertices))
        assert lowest >= bound - 1e-12


def test_lowdeg_frozen_values():
    t = trees.build(2, 2)
    ex = chains.example_chain()
    assert exact.max_corr_low_degree(t, chains.bsc(0.8), None, 0.0, 1, 0) == pytest.approx(BSC08_DEPTH2_DEGREE1, abs=1e-12)
    assert exact.max_corr_low_degree(t, ex, None, 0.0, 2, 0) == pytest.approx(EXAMPLE_DEPTH2_DEGREE2, abs=1e-12)
    assert exact.max_corr_low_degree(t, ex, None, 0.3, 2, 2) == pytest.approx(EXAMPLE_DEPTH2_DEGREE2_NOISY, abs=1e-12)
    for c, ref in enumerate(EXAMPLE_DEPTH2_DEGREE4):
        assert exact.max_corr_low_degree(t, ex, None, 0.0, 4, c) == pytest.approx(ref, abs=1e-12)


def test_lowdeg_zero_below_corrected_threshold():
    t = trees.build(2, 2)
    for c in range(3):
        assert exact.max_corr_low_degree(t, chains.example_chain(), None, 0.0, 1, c) <= 1e-9


def test_lowdeg_bsc_below_ks_decays():
    vals = [exact.max_corr_low_degree(trees.build(2, depth), chains.bsc(0.5), None, 0.0, 1, 0) for depth in (1, 2, 3)]
    np.testing.assert_allclose(vals, BSC05_DEGREE1, atol=1e-12)
    assert vals[0] > vals[1] > vals[2]


@pytest.mark.parametrize("eps", [0.0, 0.2])
def test_lowdeg_monotone_and_full_degree_identity(eps):
    t = trees.build(2, 2)
    M = chains.example_chain()
    for c in range(3):
        curve = [exact.max_corr_low_degree(t, M, None, eps, D, c) for D in range(5)]
        assert all(a <= b + 1e-12 for a, b in zip(curve, curve[1:]))
        full = exact.posterior_norm(t, M, None, eps, c)
        assert curve[-1] ** 2 == pytest.approx(full**2, abs=1e-10)


def test_repeated_constant_feature_is_zero():
    p = broadcast.RepeatedParams(2, 2, 2, 0.0, chains.example_chain())
    const = exact.LocalFeature((), np.array(1.0))
    for c in range(3):
        assert abs(exact.repeated_model_corr(p, [const], c)) < 1e-15


def test_repeated_full_degree_feature_frozen():
    M = chains.example_chain()
    f = [exact.LocalFeature.indicator((0, 1, 2, 3), (0, 2, 0, 2), 3)]
    p2 = broadcast.RepeatedParams(2, 2, 2, 0.0, M)
    p1 = broadcast.RepeatedParams(2, 2, 1, 0.0, M)
    for c, ref in enumerate(REPEATED_FULL_FEATURE):
        assert exact.repeated_model_corr(p2, f, c) == pytest.approx(ref, abs=1e-15)
        assert exact.repeated_model_corr(p1, f, c, method="enumerate") == pytest.approx(ref, abs=1e-15)


def test_repeated_factorized_matches_enumeration():
    rng = np.random.default_rng(3)
    p = broadcast.RepeatedParams(2, 2, 2, 0.1, chains.example_chain())
    basis = list(exact.repeated_feature_basis(4, 3, 2, 3))
    for idx in rng.choice(len(basis), 8, replace=False):
        feats = basis[idx]
        for c in range(3):
            a = exact.repeated_model_corr(p, feats, c)
            b = exact.repeated_model_corr(p, feats, c, method="enumerate")
            assert a == pytest.approx(b, abs=1e-14)


def test_joint_law_csv(tmp_path):
    t = trees.build(2, 1)
    law = exact.leaf_subset_law(t, chains.example_chain(), None, [0, 1])
    law.to_csv(tmp_path / "law.csv")
    lines = (tmp_path / "law.csv").read_text().splitlines()
    assert lines[0] == "root,config,probability"
    assert len(lines) == 1 + 27
    assert sum(float(x.split(",")[2]) for x in lines[1:]) == pytest.approx(1.0, abs=1e-12)
