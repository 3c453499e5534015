"""Unknown-tree reconstruction in the repeated broadcast model.

Leaves are observed under a hidden permutation and a hidden root bias
``Y*``.  Siblings are found by thresholding the pairwise statistic
``g(u, v) = |<phi, E[e(X_u) e(X_v)^T] phi>|``; recovered sibling groups are
collapsed to row-match label estimates and the procedure repeats one layer
up.  The same algorithm runs on raw samples or purely through a VSTAT(m)
oracle.

Nodes of a layer are nested tuples of observed leaf coordinates: an ``int``
for a leaf, a tuple of ``d`` children otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .broadcast import (
    RepeatedDataset,
    RepeatedParams,
    biased_prior,
    draw_repeated_samples,
    noise_matrix,
    rng_from,
    substream,
)
from .chains import as_rows, spectral, stationary, contraction_vector
from .errors import DomainError, GroupingFailure, RangeError
from .estimators import row_match_confusion, row_match_step
from .exact import all_configs, leaf_subset_law, pair_moment, vertex_marginal
from .trees import LeafPermutation, TreeTopology, canonical_form, canonicalize, permutation_from_groups

ENUM_MAX_CONFIGS = 200_000
REFERENCE_SAMPLES = 200_000
RANGE_TOL = 1e-12
BAND_TOL = 1e-12


def vstat_band(p: float, m: float) -> float:
    """Largest error VSTAT(m) may add to a query with true mean ``p``."""
    if math.isinf(m):
        return 0.0
    return max(1.0 / m, math.sqrt(max(p * (1.0 - p), 0.0) / m))


# -- queries ------------------------------------------------------------------------


def node_estimate(node, X: np.ndarray, M) -> np.ndarray:
    """Row-match label estimate of a recovered node on observed arrays ``(n, N)``."""
    if isinstance(node, (int, np.integer)):
        return X[:, int(node)]
    kids = np.stack([node_estimate(c, X, M) for c in node], axis=1)
    return row_match_step(kids, len(node), M)[:, 0]


def node_height(node) -> int:
    h = 0
    while not isinstance(node, (int, np.integer)):
        node = node[0]
        h += 1
    return h


def node_coords(node) -> list[int]:
    if isinstance(node, (int, np.integer)):
        return [int(node)]
    return [c for kid in node for c in node_coords(kid)]


@dataclass(frozen=True)
class IndicatorQuery:
    """``1(x[coords] == symbols)`` on the observed leaf vector."""

    coords: tuple[int, ...]
    symbols: tuple[int, ...]

    def __call__(self, X, M=None):
        X = np.atleast_2d(X)
        return np.all(X[:, list(self.coords)] == np.asarray(self.symbols), axis=1).astype(float)


@dataclass(frozen=True)
class EstimateQuery:
    """``1(estimate(node) == a)`` for one recovered node."""

    node: object
    a: int

    def __call__(self, X, M):
        return (node_estimate(self.node, np.atleast_2d(X), M) == self.a).astype(float)


@dataclass(frozen=True)
class EstimatePairQuery:
    """``1(estimate(u) == a, estimate(v) == b)`` for two recovered nodes."""

    u: object
    v: object
    a: int
    b: int

    def __call__(self, X, M):
        X = np.atleast_2d(X)
        return ((node_estimate(self.u, X, M) == self.a) & (node_estimate(self.v, X, M) == self.b)).astype(float)


# -- oracle -------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryRecord:
    kind: str
    p: float
    response: float
    band: float

    @property
    def ok(self) -> bool:
        return abs(self.response - self.p) <= self.band + BAND_TOL


class VStatOracle:
    """VSTAT(m) oracle for the repeated model with a fixed hidden ``(Y*, tau)``.

    Parameters
    ----------
    params : RepeatedParams
        Model; ``params.m`` is ignored in favour of ``m`` below.
    m : float
        Oracle accuracy parameter; ``math.inf`` with ``mode="exact"`` gives
        exact expectations.
    mode : {"honest", "adversarial", "exact"}
        ``honest`` answers with a fresh size-``m`` empirical mean clamped into
        the legal band; ``adversarial`` moves the full band width in the
        direction chosen by ``policy``; ``exact`` returns ``p``.
    policy : {"random", "up", "down"}
        Sign rule for adversarial answers.
    seed
        Draws the hidden state (unless given) and all response randomness.
    """

    def __init__(self, params: RepeatedParams, m: float, mode: str = "honest", policy: str = "random",
                 seed=None, y_star: int | None = None, tau: LeafPermutation | None = None,
                 reference_samples: int = REFERENCE_SAMPLES):
        if mode not in ("honest", "adversarial", "exact"):
            raise DomainError(f"unknown oracle mode {mode!r}")
        if policy not in ("random", "up", "down"):
            raise DomainError(f"unknown adversary policy {policy!r}")
        if mode == "exact":
            m = math.inf
        if not m >= 1:
            raise DomainError("m must be >= 1")
        self.params = params
        self.m = m
        self.mode = mode
        self.policy = policy
        self.log: list[QueryRecord] = []
        self._seed = 0 if seed is None else seed
        hidden = substream(self._seed, 0)
        t = params.tree
        self._y_star = int(hidden.integers(0, params.q)) if y_star is None else int(y_star)
        self._tau = (LeafPermutation(tuple(int(i) for i in hidden.permutation(t.n_leaves)))
                     if tau is None else tau)
        self._rng = substream(self._seed, 1)
        self._ref_rng = substream(self._seed, 2)
        self._reference_samples = reference_samples
        self._nu = biased_prior(self._y_star, params.q)
        self._inv = self._tau.inverse().array
        self._confusion = row_match_confusion(params.M, params.d, params.depth, params.eps)
        self._cache: dict = {}

    @classmethod
    def from_dataset(cls, ds: RepeatedDataset, m: float | None = None, **kw) -> VStatOracle:
        return cls(ds.params, ds.params.m if m is None else m, y_star=ds.y_star, tau=ds.tau, **kw)

    @property
    def queries(self) -> int:
        return len(self.log)

    def reveal(self) -> tuple[int, LeafPermutation]:
        """Hidden state, for scoring a finished run only."""
        return self._y_star, self._tau

    # exact means

    def _true_vertex(self, node) -> int | None:
        """Tree vertex whose subtree ``node`` reproduces, or None."""
        key = ("vertex", node)
        if key in self._cache:
            return self._cache[key]
        t = self.params.tree
        h = node_height(node)

        def to_positions(x):
            if isinstance(x, (int, np.integer)):
                return int(self._inv[int(x)])
            return tuple(to_positions(c) for c in x)

        pos = to_positions(node)
        first = min(self._inv[c] for c in node_coords(node))
        w = t.ancestor(t.leaf_vertex(int(first)), h)

        def true_nested(v):
            kids = t.children(v)
            return t.leaf_position(v) if not kids else tuple(true_nested(c) for c in kids)

        out = w if canonicalize(pos) == canonicalize(true_nested(w)) else None
        self._cache[key] = out
        return out

    def _reference(self, fn) -> float:
        X = draw_repeated_samples(self.params, self._y_star, self._tau, self._reference_samples, self._ref_rng)
        vals = np.asarray(fn(X, self.params.M), dtype=float)
        _check_range(vals)
        return float(vals.mean())

    def _pair_table(self, u, v) -> np.ndarray | None:
        key = ("pair", u, v)
        if key not in self._cache:
            wu, wv = self._true_vertex(u), self._true_vertex(v)
            if wu is None or wv is None or wu == wv:
                self._cache[key] = None
            else:
                K = self._confusion[node_height(u)] if node_height(u) == node_height(v) else None
                if K is None:
                    self._cache[key] = None
                else:
                    P = pair_moment(self.params.tree, self.params.M, self._nu, wu, wv)
                    self._cache[key] = K.T @ P @ K
        return self._cache[key]

    def exact_mean(self, fn) -> float:
        """True ``E[fn(X)]`` given the hidden state (exact when possible)."""
        p = self.params
        t = p.tree
        if isinstance(fn, IndicatorQuery):
            if len(set(fn.coords)) != len(fn.coords):
                raise DomainError("indicator coordinates must be distinct")
            if any(not 0 <= s < p.q for s in fn.symbols):
                return 0.0
            law = leaf_subset_law(t, p.M, self._nu, [int(self._inv[c]) for c in fn.coords], p.eps)
            return float(law.table.sum(axis=0)[tuple(fn.symbols)])
        if isinstance(fn, EstimatePairQuery):
            P = self._pair_table(fn.u, fn.v)
            return float(P[fn.a, fn.b]) if P is not None else self._reference(fn)
        if isinstance(fn, EstimateQuery):
            w = self._true_vertex(fn.node)
            if w is None:
                return self._reference(fn)
            marg = vertex_marginal(t, p.M, self._nu, w) @ self._confusion[node_height(fn.node)]
            return float(marg[fn.a])
        if p.q ** t.n_leaves <= ENUM_MAX_CONFIGS:
            law = leaf_subset_law(t, p.M, self._nu, range(t.n_leaves), p.eps)
            probs = law.table.sum(axis=0).reshape(-1)
            X = self._tau.to_observed(all_configs(p.q, t.n_leaves))
            vals = _call_batch(fn, X, p.M)
            _check_range(vals)
            return float(probs @ vals)
        return self._reference(lambda X, M: _call_batch(fn, X, M))

    # responses

    def _respond(self, fn, p: float) -> float:
        band = vstat_band(p, self.m)
        if self.mode == "exact":
            return p
        if self.mode == "adversarial":
            sign = {"up": 1.0, "down": -1.0}.get(self.policy)
            if sign is None:
                sign = 1.0 if self._rng.random() < 0.5 else -1.0
            r = p + sign * band
        elif isinstance(fn, (IndicatorQuery, EstimateQuery, EstimatePairQuery)):
            # binary query: a fresh size-m empirical mean is Binomial(m, p) / m
            r = self._rng.binomial(int(self.m), min(max(p, 0.0), 1.0)) / self.m
        else:
            X = draw_repeated_samples(self.params, self._y_star, self._tau, int(self.m), self._rng)
            vals = _call_batch(fn, X, self.params.M)
            _check_range(vals)
            r = float(vals.mean())
        r = min(max(r, p - band), p + band)
        return min(max(r, 0.0), 1.0)

    def query(self, fn) -> float:
        p = self.exact_mean(fn)
        r = self._respond(fn, p)
        self.log.append(QueryRecord(type(fn).__name__, p, r, vstat_band(p, self.m)))
        return r

    def audit(self) -> dict:
        """Re-check the band on every logged response."""
        bad = [rec for rec in self.log if not rec.ok]
        excess = max((abs(r.response - r.p) - r.band for r in self.log), default=0.0)
        return {"queries": len(self.log), "violations": len(bad), "max_excess": float(excess)}


def _call_batch(fn, X: np.ndarray, M) -> np.ndarray:
    try:
        out = np.asarray(fn(X, M), dtype=float)
    except TypeError:
        out = np.asarray(fn(X), dtype=float)
    if out.shape != (X.shape[0],):
        out = np.array([float(fn(x)) for x in X])
    return out


def _check_range(vals: np.ndarray) -> None:
    if np.any(vals < -RANGE_TOL) or np.any(vals > 1 + RANGE_TOL) or np.any(~np.isfinite(vals)):
        raise RangeError("query output outside [0, 1]")


def vstat_query(oracle: VStatOracle, fn) -> float:
    """Ask ``oracle`` for ``E[fn(X)]``; ``fn`` maps a leaf vector (or batch) to [0, 1]."""
    return oracle.query(fn)


# -- sibling statistics -------------------------------------------------------------


def select_contraction_vector(M) -> np.ndarray:
    """Second right eigenvector, or the generalized eigenvector when ``lambda_2 = 0``."""
    return contraction_vector(M)


@dataclass(frozen=True)
class SiblingStatistic:
    pair: tuple[int, int]
    value: float


def contract(P: np.ndarray, phi: np.ndarray) -> float:
    return float(abs(np.conj(phi) @ P @ phi))


def exact_layer_statistics(M, d: int, depth: int, eps: float, nu, phi=None) -> list[tuple[float, float]]:
    """Exact (sibling, largest non-sibling) statistic for each layer that needs grouping.

    Layer ``s`` holds the row-match estimates of the nodes ``s`` levels above
    the leaves; layers with only ``d`` nodes are grouped trivially and omitted.
    """
    rows = as_rows(M)
    phi = select_contraction_vector(rows) if phi is None else phi
    K = row_match_confusion(rows, d, depth, eps)
    out = []
    for s in range(depth - 1):
        h = depth - s
        stats = []
        for j in range(1, h + 1):
            Mj = np.linalg.matrix_power(rows, j)
            Pi = np.diag(np.asarray(nu) @ np.linalg.matrix_power(rows, h - j))
            stats.append(contract(K[s].T @ Mj.T @ Pi @ Mj @ K[s], phi))
        out.append((stats[0], max(stats[1:])))
    return out


def exact_gaps(M, d: int, depth: int, eps: float = 0.0) -> list[float]:
    """Per-layer worst case over ``Y*`` of sibling minus non-sibling statistic."""
    q = as_rows(M).shape[0]
    per_y = [exact_layer_statistics(M, d, depth, eps, biased_prior(y, q)) for y in range(q)]
    return [min(s[i][0] - s[i][1] for s in per_y) for i in range(depth - 1)]


def default_alpha(M, d: int, depth: int, eps: float = 0.0) -> list[float]:
    """Per-layer threshold slack.

    With ``lambda_2 = 0`` it is half the exact worst-case gap; otherwise
    ``(|lambda_2|^2 - |lambda_2|^4) min_c pi(c) / 4``.
    """
    sd = spectral(M)
    if sd.rank_one_power is not None:
        return [g / 2 for g in exact_gaps(M, d, depth, eps)]
    lam = sd.lambda2_modulus
    a = (lam**2 - lam**4) * float(stationary(M).min()) / 4
    return [a] * max(depth - 1, 0)


def group_by_threshold(G: np.ndarray, alpha: float, d: int) -> list[list[int]]:
    """Connected components of ``{(u, v): G[u, v] >= max G - alpha}``.

    Raises GroupingFailure unless every component has exactly ``d`` members.
    """
    n = G.shape[0]
    off = ~np.eye(n, dtype=bool)
    gmax = G[off].max()
    adj = (G >= gmax - alpha) & off
    _, comp = connected_components(csr_matrix(adj), directed=False)
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(comp):
        groups.setdefault(int(c), []).append(i)
    out = sorted(groups.values())
    sizes = sorted({len(g) for g in out})
    if sizes != [d]:
        raise GroupingFailure(f"component sizes {sizes}, expected {d}")
    return out


def measured_gap(G: np.ndarray, groups: list[list[int]]) -> float:
    """Smallest within-group statistic minus largest between-group statistic."""
    n = G.shape[0]
    same = np.zeros((n, n), dtype=bool)
    for g in groups:
        same[np.ix_(g, g)] = True
    off = ~np.eye(n, dtype=bool)
    between = G[off & ~same]
    within = G[off & same]
    return float(within.min() - (between.max() if between.size else 0.0))


# -- statistic sources --------------------------------------------------------------


class _SampleSource:
    def __init__(self, samples: np.ndarray, M):
        self.labels = np.asarray(samples)
        self.M = M
        self.queries = 0

    def statistics(self, nodes, phi) -> np.ndarray:
        Y = phi[self.labels]
        return np.abs(np.conj(Y).T @ Y) / Y.shape[0]

    def advance(self, groups, d):
        kids = np.concatenate([self.labels[:, g] for g in groups], axis=1)
        self.labels = row_match_step(kids, d, self.M)

    def root_label(self, root, q) -> int:
        return recover_label(self.labels[:, 0], q)


class _OracleSource:
    def __init__(self, oracle: VStatOracle, M):
        self.oracle = oracle
        self.M = M
        self.queries = 0

    def _ask(self, fn) -> float:
        self.queries += 1
        return vstat_query(self.oracle, fn)

    def statistics(self, nodes, phi) -> np.ndarray:
        q = len(phi)
        n = len(nodes)
        G = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                P = np.array([[self._ask(EstimatePairQuery(nodes[i], nodes[j], a, b)) for b in range(q)]
                              for a in range(q)])
                G[i, j] = G[j, i] = contract(P, phi)
        return G

    def advance(self, groups, d):
        pass

    def root_label(self, root, q) -> int:
        r = [self._ask(EstimateQuery(root, c)) for c in range(q)]
        return int(np.argmax(np.round(r, 12)))


def recover_label(root_estimates: np.ndarray, q: int) -> int:
    """Plurality vote over per-sample root estimates, ties to the lowest label."""
    return int(np.argmax(np.bincount(np.asarray(root_estimates, dtype=np.int64), minlength=q)))


# -- reconstruction -----------------------------------------------------------------


@dataclass
class Reconstruction:
    canonical_tree: object
    tau_hat: LeafPermutation
    y_hat: int
    queries: int
    m: float
    alpha: list[float]
    per_layer_gaps: list[float]
    nested: object = field(repr=False, default=None)

    def matches(self, t: TreeTopology, tau: LeafPermutation) -> bool:
        return self.canonical_tree == canonical_form(t, tau)

    def to_json(self) -> str:
        def lists(x):
            return x if isinstance(x, int) else [lists(c) for c in x]

        return json.dumps({
            "canonical_tree": lists(self.canonical_tree),
            "tau_hat": list(self.tau_hat.tau),
            "y_hat": self.y_hat,
            "queries": self.queries,
            "m": None if math.isinf(self.m) else self.m,
            "alpha": self.alpha,
            "per_layer_gaps": self.per_layer_gaps,
        }, sort_keys=True)


def reconstruct_tree(data_or_oracle, M, alpha=None, d: int | None = None, depth: int | None = None,
                     eps: float | None = None) -> Reconstruction:
    """Recover the hidden tree and ``Y*`` from samples or a VSTAT oracle.

    Parameters
    ----------
    data_or_oracle : ndarray (m, N), RepeatedDataset or VStatOracle
        Observed samples, or an oracle (every expectation becomes a query).
    alpha : float, sequence of floats or None
        Threshold slack, one value or one per layer; None uses
        :func:`default_alpha`.
    d, depth, eps
        Taken from the dataset or oracle parameters when omitted.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    if isinstance(data_or_oracle, VStatOracle):
        p = data_or_oracle.params
        source = _OracleSource(data_or_oracle, rows)
        m = data_or_oracle.m
    elif isinstance(data_or_oracle, RepeatedDataset):
        p = data_or_oracle.params
        source = _SampleSource(data_or_oracle.samples, rows)
        m = data_or_oracle.samples.shape[0]
    else:
        samples = np.atleast_2d(np.asarray(data_or_oracle))
        p = None
        source = _SampleSource(samples, rows)
        m = samples.shape[0]
    d = d if d is not None else p.d
    depth = depth if depth is not None else p.depth
    eps = eps if eps is not None else (p.eps if p is not None else 0.0)
    n_leaves = d**depth
    if isinstance(source, _SampleSource) and source.labels.shape[1] != n_leaves:
        raise DomainError(f"samples have {source.labels.shape[1]} coordinates, expected {n_leaves}")
    if m < 1:
        raise DomainError("need at least one sample")

    if alpha is None:
        alphas = default_alpha(rows, d, depth, eps)
    elif np.ndim(alpha) == 0:
        alphas = [float(alpha)] * max(depth - 1, 0)
    else:
        alphas = [float(a) for a in alpha]
    phi = select_contraction_vector(rows) if depth > 1 else None

    nodes: list = list(range(n_leaves))
    gaps: list[float] = []
    for s in range(depth):
        if len(nodes) == d:
            groups = [list(range(d))]
        else:
            G = source.statistics(nodes, phi)
            groups = group_by_threshold(G, alphas[s], d)
            gaps.append(measured_gap(G, groups))
        source.advance(groups, d)
        nodes = [tuple(nodes[i] for i in g) for g in groups]
    root = nodes[0] if depth > 0 else nodes[0]
    y_hat = source.root_label(root, q)
    return Reconstruction(canonicalize(root), permutation_from_groups(root), y_hat,
                          source.queries, m, alphas, gaps, root)


def run_sq_pipeline(oracle: VStatOracle, M, d: int, depth: int, alpha=None) -> Reconstruction:
    """Reconstruction using only VSTAT queries; ``queries`` counts every one."""
    return reconstruct_tree(oracle, M, alpha, d, depth)


def query_bound(n_leaves: int, q: int) -> int:
    """Budget ``N^2 q^2`` on the number of SQ queries."""
    return n_leaves**2 * q**2
