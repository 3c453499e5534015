"""Exact computations on enumerable instances.

Everything here is deterministic and is the ground truth the Monte Carlo
and algorithmic code is checked against: joint laws of (root, leaf subset),
BP posteriors, mutual information, total-variation gaps, pair moments and the
exact degree-``D`` maximum correlation.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .broadcast import as_prior, biased_prior, noise_matrix
from .chains import as_rows, stationary
from .errors import DomainError, SizeOverflow
from .trees import TreeTopology, graph_distance, lca

MAX_TABLE_ENTRIES = 10_000_000
MAX_PERMUTATIONS = 1_000_000
PINV_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class JointLaw:
    """Exact law of ``(X_root, X'_S)``.

    ``table[c, x_1, ..., x_k]`` is the probability that the root is ``c`` and
    the observed vertices in ``subset`` (in that order) read ``x``.
    """

    subset: tuple[int, ...]
    table: np.ndarray

    @property
    def q(self) -> int:
        return self.table.shape[0]

    def root_marginal(self) -> np.ndarray:
        return self.table.reshape(self.q, -1).sum(axis=1)

    def config_marginal(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def conditional(self) -> np.ndarray:
        """``P(x_S | root = c)`` with shape ``(q, q**k)``; rows with zero mass are zero."""
        flat = self.table.reshape(self.q, -1)
        nu = flat.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(nu > 0, flat / nu, 0.0)

    def to_csv(self, path: str | Path) -> None:
        flat = self.table.reshape(self.q, -1)
        configs = all_configs(self.q, len(self.subset))
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["root", "config", "probability"])
            for c in range(self.q):
                for j, x in enumerate(configs):
                    w.writerow([c, "".join(str(int(v)) for v in x), repr(float(flat[c, j]))])


def all_configs(q: int, n: int) -> np.ndarray:
    """All of ``[q]^n`` as rows, in C (last coordinate fastest) order."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.indices((q,) * n).reshape(n, -1).T.copy()


def _check_size(q: int, k: int, cap: int) -> None:
    if q ** (k + 1) > cap:
        raise SizeOverflow(f"table of {q}**{k + 1} entries exceeds cap {cap}")


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Product sharing axis 0, outer product over the remaining axes.
    q = a.shape[0]
    return a.reshape(a.shape + (1,) * (b.ndim - 1)) * b.reshape((q,) + (1,) * (a.ndim - 1) + b.shape[1:])


def conditional_vertex_table(t: TreeTopology, M, vertices: Sequence[int], eps: float = 0.0,
                             max_entries: int = MAX_TABLE_ENTRIES) -> np.ndarray:
    """``P(X'_V = x | X_root = c)`` for an ordered list of distinct vertices.

    Messages are passed upward over the spanning subtree of ``vertices``; a
    vertex's message is a function of its own label and of the joint
    configuration of the observed vertices below it.  Noise ``eps`` applies
    to observed leaves only.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    vertices = [int(v) for v in vertices]
    if len(set(vertices)) != len(vertices):
        raise DomainError("vertices must be distinct")
    _check_size(q, len(vertices), max_entries)
    observed = set(vertices)
    active = set()
    for v in vertices:
        t.vertex_depth(v)
        while v not in active:
            active.add(v)
            if v == 0:
                break
            v = (v - 1) // t.d
    leaf_channel = noise_matrix(q, eps)
    order: list[int] = []

    def message(v):
        kids = [c for c in t.children(v) if c in active]
        if v in observed:
            res = leaf_channel.copy() if not kids and eps else np.eye(q)
            order.append(v)
        else:
            res = np.ones(q)
        for c in kids:
            res = _outer(res, np.tensordot(rows, message(c), axes=(1, 0)))
        return res

    table = message(0) if vertices else np.ones(q)
    # ``order`` is depth-first; permute axes into the caller's order.
    perm = [order.index(v) + 1 for v in vertices]
    return np.transpose(table, [0] + perm)


def vertex_subset_law(t: TreeTopology, M, nu, vertices: Sequence[int], eps: float = 0.0,
                      max_entries: int = MAX_TABLE_ENTRIES) -> JointLaw:
    q = as_rows(M).shape[0]
    nu = as_prior(nu, q)
    cond = conditional_vertex_table(t, M, vertices, eps, max_entries)
    table = nu.reshape((q,) + (1,) * (cond.ndim - 1)) * cond
    return JointLaw(tuple(int(v) for v in vertices), table)


def leaf_subset_law(t: TreeTopology, M, nu, S: Sequence[int], eps: float = 0.0,
                    max_entries: int = MAX_TABLE_ENTRIES) -> JointLaw:
    """Exact law of the root and the noisy leaves at positions ``S``."""
    if any(not 0 <= s < t.n_leaves for s in S):
        raise DomainError("leaf position out of range")
    law = vertex_subset_law(t, M, nu, [t.leaf_vertex(s) for s in S], eps, max_entries)
    return JointLaw(tuple(int(s) for s in S), law.table)


def brute_force_joint(t: TreeTopology, M, nu, eps: float = 0.0,
                      max_entries: int = MAX_TABLE_ENTRIES) -> np.ndarray:
    """``P(root, X'_L)`` by summing the product formula over every labeling.

    Independent of the message-passing code; only usable on tiny trees.
    Returns shape ``(q, q**N)``.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    nu = as_prior(nu, q)
    n = t.n_vertices
    if q**n > max_entries:
        raise SizeOverflow(f"{q}**{n} labelings exceeds cap {max_entries}")
    labels = all_configs(q, n)
    prob = nu[labels[:, 0]].copy()
    for v in range(1, n):
        prob *= rows[labels[:, (v - 1) // t.d], labels[:, v]]
    N = t.n_leaves
    leaves = labels[:, t.first_leaf:]
    leaf_index = np.ravel_multi_index(leaves.T, (q,) * N) if N else np.zeros(len(labels), dtype=np.int64)
    joint = np.zeros((q, q**N))
    np.add.at(joint, (labels[:, 0], leaf_index), prob)
    if eps:
        T = noise_matrix(q, eps)
        tab = joint.reshape((q,) + (q,) * N)
        for axis in range(1, N + 1):
            tab = np.moveaxis(np.tensordot(tab, T, axes=(axis, 0)), -1, axis)
        joint = tab.reshape(q, -1)
    return joint


def mutual_information_root(law: JointLaw) -> float:
    """Plug-in ``I(X_root; X'_S)`` in nats, with ``0 log 0 = 0``."""
    flat = law.table.reshape(law.q, -1)
    pc = flat.sum(axis=1, keepdims=True)
    px = flat.sum(axis=0, keepdims=True)
    denom = pc * px
    mask = flat > 0
    return float(np.sum(flat[mask] * np.log(flat[mask] / denom[mask])))


def root_posterior_bp(t: TreeTopology, M, nu, leaves, eps: float = 0.0) -> np.ndarray:
    """Exact root posterior by upward belief propagation.

    ``leaves`` may be a single vector ``(N,)`` or a batch ``(n, N)``; the
    output has a trailing axis of length ``q``.  Runs in
    ``O(n_vertices * q^2)`` per sample.  An observation of probability zero
    returns the prior.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    nu = as_prior(nu, q)
    x = np.asarray(leaves)
    single = x.ndim == 1
    x = np.atleast_2d(x).astype(np.int64)
    n, N = x.shape
    if N != t.n_leaves:
        raise DomainError(f"expected {t.n_leaves} leaves, got {N}")
    # likelihood of the observed leaves below each vertex, normalized to max 1
    like = noise_matrix(q, eps)[:, x]            # (q, n, N)
    like = np.moveaxis(like, 0, -1)               # (n, N, q)
    with np.errstate(divide="ignore"):
        for _ in range(t.depth):
            msg = like @ rows.T                   # sum_b M[a, b] L_child(b)
            logm = np.log(msg).reshape(n, -1, t.d, q).sum(axis=2)
            top = logm.max(axis=-1, keepdims=True)
            top[~np.isfinite(top)] = 0.0
            like = np.exp(logm - top)
    post = like[:, 0, :] * nu
    z = post.sum(axis=-1, keepdims=True)
    post = np.where(z > 0, post / np.where(z > 0, z, 1.0), nu)
    return post[0] if single else post


def enumeration_posterior(joint: np.ndarray) -> np.ndarray:
    """Posterior rows ``P(root | x)`` from a ``(q, K)`` joint table (NaN where ``P(x)=0``)."""
    px = joint.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (joint / px).T


def tv_reconstruction_gap(t: TreeTopology, M, eps: float = 0.0, statistic=None,
                          max_entries: int = MAX_TABLE_ENTRIES) -> float:
    """``max_{c,c'} d_TV`` between leaf laws (optionally projected) given the root.

    ``statistic`` is ``None`` (full leaf vector), ``"counts"`` (the vector of
    symbol counts), or a callable mapping a ``(K, N)`` configuration array to
    ``K`` keys (1-D or rows of a 2-D array).
    """
    if not 0.0 <= eps <= 1.0:
        raise DomainError(f"noise rate must lie in [0, 1], got {eps}")
    rows = as_rows(M)
    q = rows.shape[0]
    N = t.n_leaves
    cond = conditional_vertex_table(
        t, rows, [t.leaf_vertex(j) for j in range(N)], eps, max_entries
    ).reshape(q, -1)
    if statistic is not None:
        configs = all_configs(q, N)
        if statistic == "counts":
            keys = np.stack([(configs == c).sum(axis=1) for c in range(q)], axis=1)
        else:
            keys = np.asarray(statistic(configs))
        axis = 0 if keys.ndim > 1 else None
        _, inv = np.unique(keys, axis=axis, return_inverse=True)
        inv = inv.reshape(-1)
        proj = np.zeros((q, inv.max() + 1))
        for c in range(q):
            proj[c] = np.bincount(inv, weights=cond[c], minlength=proj.shape[1])
        cond = proj
    gap = 0.0
    for a in range(q):
        for b in range(a + 1, q):
            gap = max(gap, 0.5 * float(np.abs(cond[a] - cond[b]).sum()))
    return gap


def vertex_marginal(t: TreeTopology, M, nu, v: int) -> np.ndarray:
    rows = as_rows(M)
    nu = as_prior(nu, rows.shape[0])
    return nu @ np.linalg.matrix_power(rows, t.vertex_depth(v))


def pair_moment(t: TreeTopology, M, nu, u: int, v: int) -> np.ndarray:
    """``E[e(X_u) e(X_v)^T] = (M^a)^T Pi_w M^b`` with ``w = lca(u, v)``.

    ``a`` and ``b`` are the depths of ``u`` and ``v`` below ``w``.
    """
    if u == v:
        raise DomainError("pair moment needs distinct vertices")
    rows = as_rows(M)
    w = lca(t, u, v)
    dw = t.vertex_depth(w)
    a, b = t.vertex_depth(u) - dw, t.vertex_depth(v) - dw
    Pi = np.diag(vertex_marginal(t, rows, nu, w))
    return np.linalg.matrix_power(rows, a).T @ Pi @ np.linalg.matrix_power(rows, b)


def marginal_lower_bound(M, nu) -> float:
    """``beta * min_c pi(c)`` with ``beta`` the largest weight such that ``nu >= beta pi``."""
    rows = as_rows(M)
    nu = as_prior(nu, rows.shape[0])
    pi = stationary(rows)
    beta = min(1.0, float(np.min(nu / pi)))
    return beta * float(pi.min())


def paper_threshold(k: int | None, depth: int) -> float:
    """``2**floor(depth/(k-1))``: the subset-size bound as originally stated."""
    if k is None:
        return 0.0
    if k == 1:
        return math.inf
    return float(2 ** (depth // (k - 1)))


def independence_threshold(k: int | None, depth: int) -> float:
    """Largest ``T`` such that every leaf subset with ``|S| < T`` is independent of the root.

    ``2**floor((depth-1)/(k-1))``: the root may have a single child in the
    spanning subtree, so forced branching starts one level down.
    """
    if k is None:
        return 0.0
    if k == 1:
        return math.inf
    if depth == 0:
        return 0.5
    return float(2 ** ((depth - 1) // (k - 1)))


# -- degree-D maximum correlation ------------------------------------------------


def indicator_features(configs: np.ndarray, q: int, D: int) -> tuple[np.ndarray, list]:
    """Products of one-hot indicators on at most ``D`` coordinates.

    Symbol ``q-1`` is omitted (it is one minus the others), so the columns
    form a basis of the functions of Efron-Stein degree at most ``D``.
    Returns the ``(K, p)`` feature matrix and the list of
    ``(coords, symbols)`` labels.
    """
    K, n = configs.shape
    onehot = [[configs[:, i] == a for a in range(q - 1)] for i in range(n)]
    cols = [np.ones(K, dtype=bool)]
    labels: list = [((), ())]
    for size in range(1, min(D, n) + 1):
        for coords in itertools.combinations(range(n), size):
            for syms in itertools.product(range(q - 1), repeat=size):
                col = onehot[coords[0]][syms[0]]
                for i, a in zip(coords[1:], syms[1:]):
                    col = col & onehot[i][a]
                cols.append(col)
                labels.append((coords, syms))
    return np.stack(cols, axis=1).astype(float), labels


def projection_norm(features: np.ndarray, weights: np.ndarray, target: np.ndarray,
                    rtol: float = PINV_RTOL) -> float:
    """L2(weights) norm of the projection of ``target`` onto span(features)."""
    G = features.T @ (weights[:, None] * features)
    b = features.T @ (weights * target)
    val = float(b @ np.linalg.pinv(G, rcond=rtol, hermitian=True) @ b)
    return math.sqrt(max(val, 0.0))


def max_corr_low_degree(t: TreeTopology, M, nu, eps: float, D: int, c: int,
                        max_entries: int = MAX_TABLE_ENTRIES) -> float:
    """Exact ``Corr_{<=D}`` between the noisy leaves and ``1(root=c) - nu(c)``.

    Computed as the norm, under the true leaf law, of the projection of
    ``E[1(root=c) - nu(c) | leaves]`` onto functions of degree at most ``D``.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    nu = as_prior(nu, q)
    N = t.n_leaves
    if not 0 <= D <= N:
        raise DomainError(f"degree must lie in [0, {N}]")
    law = leaf_subset_law(t, rows, nu, range(N), eps, max_entries)
    flat = law.table.reshape(q, -1)
    px = flat.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(px > 0, flat[c] / px, 0.0) - nu[c]
    F, _ = indicator_features(all_configs(q, N), q, D)
    return projection_norm(F, px, g)


def posterior_norm(t: TreeTopology, M, nu, eps: float, c: int) -> float:
    """``sqrt(sum_x P(x) E[1(root=c) - nu(c) | x]^2)``, the full-degree ceiling."""
    rows = as_rows(M)
    q = rows.shape[0]
    nu = as_prior(nu, q)
    flat = leaf_subset_law(t, rows, nu, range(t.n_leaves), eps).table.reshape(q, -1)
    px = flat.sum(axis=0)
    mask = px > 0
    g = flat[c, mask] / px[mask] - nu[c]
    return math.sqrt(float(np.sum(px[mask] * g * g)))


# -- repeated unknown-tree model ---------------------------------------------------


@dataclass(frozen=True)
class LocalFeature:
    """A function of one sample that reads only observed coordinates ``coords``.

    ``table`` has shape ``(q,) * len(coords)``.
    """

    coords: tuple[int, ...]
    table: np.ndarray

    @staticmethod
    def indicator(coords: Sequence[int], symbols: Sequence[int], q: int) -> "LocalFeature":
        tab = np.zeros((q,) * len(coords))
        tab[tuple(symbols)] = 1.0
        return LocalFeature(tuple(int(c) for c in coords), tab)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.table[tuple(x[:, c] for c in self.coords)] if self.coords else np.full(len(x), float(self.table))


def repeated_model_corr(params, feature: Sequence[LocalFeature], c: int, method: str = "factorized",
                        max_entries: int = MAX_TABLE_ENTRIES) -> float:
    """Exact ``E[prod_i f_i(X^(i)) (1(Y*=c) - 1/q)]`` in the repeated model.

    ``feature[i]`` acts on sample ``i`` (missing trailing samples are the
    constant 1).  ``method="factorized"`` conditions on ``(Y*, tau)`` so the
    samples factor, and averages over injective placements of the touched
    coordinates; ``method="enumerate"`` sums over every configuration of all
    ``m`` samples and every permutation.
    """
    t = params.tree
    q, N, m = params.q, t.n_leaves, params.m
    feats = list(feature)
    if len(feats) > m:
        raise DomainError(f"{len(feats)} local features for m={m} samples")
    if method == "enumerate":
        return _repeated_corr_enumerate(params, feats, c, max_entries)
    touched = sorted({j for f in feats for j in f.coords})
    n_place = math.perm(N, len(touched))
    if n_place > MAX_PERMUTATIONS:
        raise SizeOverflow(f"{n_place} placements exceeds cap {MAX_PERMUTATIONS}")

    @lru_cache(maxsize=None)
    def local_law(y: int, positions: tuple[int, ...]) -> np.ndarray:
        return leaf_subset_law(t, params.M, biased_prior(y, q), positions, params.eps,
                               max_entries).table.sum(axis=0)

    total = 0.0
    for y in range(q):
        acc = 0.0
        for place in itertools.permutations(range(N), len(touched)):
            where = dict(zip(touched, place))
            prod = 1.0
            for f in feats:
                if f.coords:
                    law = local_law(y, tuple(where[j] for j in f.coords))
                    prod *= float(np.sum(law * f.table))
                else:
                    prod *= float(f.table)
                if prod == 0.0:
                    break
            acc += prod
        total += ((y == c) - 1.0 / q) * acc / n_place
    return total / q


def _repeated_corr_enumerate(params, feats, c, max_entries):
    m = params.m

    def fn(X):
        out = np.ones(len(X))
        for i, f in enumerate(feats):
            out *= f(X[:, i, :])
        return out

    return repeated_model_expectation(params, fn, c, max_entries)


def repeated_model_expectation(params, fn: Callable[[np.ndarray], np.ndarray], c: int,
                               max_entries: int = MAX_TABLE_ENTRIES) -> float:
    """``E[F(X) (1(Y*=c) - 1/q)]`` for an arbitrary function of the whole dataset.

    ``fn`` maps an array of datasets with shape ``(K, m, N)`` to ``K`` values.
    Sums over ``Y*``, every permutation and every joint configuration.
    """
    t = params.tree
    q, N, m = params.q, t.n_leaves, params.m
    if q ** (N * m) > max_entries or math.factorial(N) > MAX_PERMUTATIONS:
        raise SizeOverflow("repeated-model enumeration exceeds cap")
    configs = all_configs(q, N)
    datasets = all_configs(q, N * m).reshape(-1, m, N)
    values = np.asarray(fn(datasets), dtype=float)
    sample_idx = np.stack([np.ravel_multi_index(datasets[:, i, :].T, (q,) * N) for i in range(m)], axis=1)
    cond = conditional_vertex_table(t, params.M, [t.leaf_vertex(j) for j in range(N)],
                                    params.eps, max_entries).reshape(q, -1)
    total = 0.0
    for y in range(q):
        leaf_law = biased_prior(y, q) @ cond        # indexed by tree-position configuration
        acc = 0.0
        for perm in itertools.permutations(range(N)):
            # observed x has x[perm[j]] = leaves[j]
            p_obs = leaf_law[np.ravel_multi_index(configs[:, list(perm)].T, (q,) * N)]
            joint = np.prod(p_obs[sample_idx], axis=1)
            acc += float(joint @ values)
        total += ((y == c) - 1.0 / q) * acc / math.factorial(N)
    return total / q


def repeated_feature_basis(N: int, q: int, m: int, max_total: int):
    """Every product of per-sample indicator features with ``sum |S_i| <= max_total``."""
    per = []
    for size in range(0, min(max_total, N) + 1):
        for coords in itertools.combinations(range(N), size):
            for syms in itertools.product(range(q), repeat=size):
                per.append((coords, syms))
    for combo in itertools.product(per, repeat=m):
        if sum(len(cs) for cs, _ in combo) <= max_total:
            yield [LocalFeature.indicator(cs, ss, q) for cs, ss in combo]


def lemma_identity_residual(t: TreeTopology, M, nu, u: int, v: int) -> float:
    """Max-abs difference between :func:`pair_moment` and the message-passing law of ``(X_u, X_v)``."""
    dp = vertex_subset_law(t, M, nu, [u, v]).table.sum(axis=0)
    return float(np.max(np.abs(dp - pair_moment(t, M, nu, u, v))))


def equidistant_pairs(t: TreeTopology):
    """Distinct vertex pairs at equal depth below their common ancestor."""
    for u in range(t.n_vertices):
        for v in range(u + 1, t.n_vertices):
            if t.vertex_depth(u) == t.vertex_depth(v):
                yield u, v, graph_distance(t, u, v) // 2
