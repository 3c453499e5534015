"""Efficient root estimators: recursive row matching, BP argmax and the
count statistic, plus a seeded accuracy harness.

All estimators take leaf arrays in tree-position order, either one vector
``(N,)`` or a batch ``(n, N)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import binomtest, multinomial

from .broadcast import as_prior, noise_matrix, sample_leaves, substream
from .chains import as_rows, spectral
from .errors import DomainError, SingularChannel
from .exact import all_configs, root_posterior_bp
from .trees import TreeTopology

# Distances are rounded before argmin so that exact ties resolve to the lowest index.
TIE_DECIMALS = 12


@dataclass(frozen=True)
class RowMatchConfig:
    distance: str = "tv"

    def __post_init__(self):
        if self.distance not in ("tv", "l2"):
            raise DomainError(f"unknown distance {self.distance!r}")


def _distances(freqs: np.ndarray, rows: np.ndarray, distance: str) -> np.ndarray:
    diff = freqs[..., None, :] - rows
    if distance == "tv":
        out = 0.5 * np.abs(diff).sum(axis=-1)
    else:
        out = np.sqrt((diff**2).sum(axis=-1))
    return np.round(out, TIE_DECIMALS)


def row_match_step(labels: np.ndarray, d: int, M, config: RowMatchConfig = RowMatchConfig()) -> np.ndarray:
    """Estimate one level up: each block of ``d`` consecutive labels votes for
    the row of ``M`` closest to its empirical distribution."""
    rows = as_rows(M)
    q = rows.shape[0]
    n, width = labels.shape
    blocks = labels.reshape(n, width // d, d)
    freqs = np.stack([(blocks == c).sum(axis=-1) for c in range(q)], axis=-1) / d
    return _distances(freqs, rows, config.distance).argmin(axis=-1).astype(labels.dtype)


def row_match_levels(t: TreeTopology, M, leaves, config: RowMatchConfig = RowMatchConfig()) -> list[np.ndarray]:
    """Estimated labels at every level, bottom up: ``[leaves, level l-1, ..., root]``."""
    x = np.atleast_2d(np.asarray(leaves))
    out = [x]
    for _ in range(t.depth):
        x = row_match_step(x, t.d, M, config)
        out.append(x)
    return out


def row_match_root(t: TreeTopology, M, leaves, config: RowMatchConfig = RowMatchConfig()):
    leaves = np.asarray(leaves)
    root = row_match_levels(t, M, leaves, config)[-1][:, 0]
    return int(root[0]) if leaves.ndim == 1 else root.astype(np.int64)


def bp_argmax_root(t: TreeTopology, M, nu, leaves, eps: float = 0.0):
    post = root_posterior_bp(t, M, nu, leaves, eps)
    return int(np.argmax(post)) if post.ndim == 1 else np.argmax(post, axis=-1)


def compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]])
    out = []
    for first in range(total + 1):
        rest = compositions(total - first, parts - 1)
        out.append(np.hstack([np.full((len(rest), 1), first), rest]))
    return np.vstack(out)


def row_match_confusion(M, d: int, height: int, eps: float = 0.0,
                        config: RowMatchConfig = RowMatchConfig()) -> list[np.ndarray]:
    """Exact law of the row-match estimate given the true label.

    Returns ``[K_0, ..., K_height]`` with ``K_h[a, b]`` the probability that
    a node ``h`` levels above the leaves is estimated as ``b`` when its true
    label is ``a``; ``K_0`` is the leaf noise channel.  Children of a node
    are i.i.d. given its label, so the vote counts are multinomial.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    counts = compositions(d, q)
    winner = _distances(counts / d, rows, config.distance).argmin(axis=-1)
    K = noise_matrix(q, eps)
    out = [K]
    for _ in range(height):
        child = rows @ K
        nxt = np.zeros((q, q))
        for a in range(q):
            pmf = multinomial.pmf(counts, d, child[a])
            nxt[a] = np.bincount(winner, weights=pmf, minlength=q)
        K = nxt / nxt.sum(axis=1, keepdims=True)
        out.append(K)
    return out


@dataclass(frozen=True)
class CountStatistic:
    """Linear leaf statistic ``S = sum_c s_c #{leaves = c}``."""

    s: np.ndarray
    v: np.ndarray
    lam: complex
    d: int
    depth: int


def count_statistic_fit(M, d: int, depth: int) -> CountStatistic:
    """Coefficients ``s = v / (d lambda_2)^depth`` so that ``E[S | root=c] = v_c``."""
    sd = spectral(M)
    if sd.lambda2_modulus < 1e-12 or sd.second_eigenvector is None:
        raise SingularChannel("count statistic needs lambda_2 != 0")
    v = sd.second_eigenvector
    lam = sd.lambda2 if np.iscomplexobj(v) else sd.lambda2.real
    s = v / (d * lam) ** depth
    return CountStatistic(s, v, lam, d, depth)


def count_statistic_eval(stat: CountStatistic, leaves):
    x = np.asarray(leaves)
    q = len(stat.s)
    counts = np.stack([(x == c).sum(axis=-1) for c in range(q)], axis=-1)
    return counts @ stat.s


def count_moments(stat: CountStatistic, M, eps: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``E[S | root=c]`` and ``E[|S|^2 | root=c]`` (``S^2`` for real ``s``).

    Recursion over levels: a node's subtree sum is the sum of ``d`` i.i.d.
    child subtree sums given the node's label.
    """
    rows = as_rows(M)
    s = noise_matrix(rows.shape[0], eps) @ stat.s
    s2 = noise_matrix(rows.shape[0], eps) @ (np.abs(stat.s) ** 2)
    m1, m2 = s, s2
    for _ in range(stat.depth):
        c1, c2 = rows @ m1, rows @ m2
        m1, m2 = stat.d * c1, stat.d * c2 + stat.d * (stat.d - 1) * np.abs(c1) ** 2
    return m1, np.real(m2)


def count_estimate(stat: CountStatistic, leaves):
    """Label whose ``v_c`` is closest to the observed statistic."""
    S = np.asarray(count_statistic_eval(stat, leaves))
    dist = np.abs(S[..., None] - stat.v)
    return np.argmin(np.round(dist, TIE_DECIMALS), axis=-1)


# -- accuracy harness ---------------------------------------------------------------


def make_estimator(name: str, t: TreeTopology, M, nu=None, eps: float = 0.0,
                   config: RowMatchConfig = RowMatchConfig()) -> Callable[[np.ndarray], np.ndarray]:
    """Batch estimator ``(n, N) -> (n,)`` by name: ``rowmatch``, ``bp`` or ``count``."""
    rows = as_rows(M)
    if name == "rowmatch":
        return lambda x: row_match_root(t, rows, np.atleast_2d(x), config)
    if name == "bp":
        return lambda x: bp_argmax_root(t, rows, nu, np.atleast_2d(x), eps)
    if name == "count":
        stat = count_statistic_fit(rows, t.d, t.depth)
        return lambda x: count_estimate(stat, np.atleast_2d(x))
    raise DomainError(f"unknown estimator {name!r}")


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(int(errors), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class AccuracyReport:
    estimator: str
    d: int
    depth: int
    eps: float
    trials: np.ndarray  # per class
    errors: np.ndarray  # per class
    confidence: float = 0.95
    extra: dict = field(default_factory=dict)

    @property
    def class_error(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.trials > 0, self.errors / np.maximum(self.trials, 1), np.nan)

    @property
    def worst_class_error(self) -> float:
        return float(np.nanmax(self.class_error))

    @property
    def overall_error(self) -> float:
        return float(self.errors.sum() / self.trials.sum())

    @property
    def accuracy(self) -> float:
        return 1.0 - self.overall_error

    def worst_class(self) -> int:
        return int(np.nanargmax(self.class_error))

    def interval(self, c: int | None = None) -> tuple[float, float]:
        if c is None:
            return wilson_interval(self.errors.sum(), self.trials.sum(), self.confidence)
        return wilson_interval(self.errors[c], self.trials[c], self.confidence)

    def rows(self):
        for c in list(range(len(self.trials))) + [None]:
            lo, hi = self.interval(c)
            yield {
                "estimator": self.estimator, "d": self.d, "depth": self.depth, "eps": self.eps,
                "trials": int(self.trials.sum() if c is None else self.trials[c]),
                "class": "all" if c is None else c,
                "errors": int(self.errors.sum() if c is None else self.errors[c]),
                "ci_low": round(lo, 6), "ci_high": round(hi, 6),
            }

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        for r in self.rows():
            w.writerow(r)
        return buf.getvalue()


CSV_FIELDS = ["estimator", "d", "depth", "eps", "trials", "class", "errors", "ci_low", "ci_high"]


def accuracy_report(estimator, t: TreeTopology, M, nu=None, eps: float = 0.0, trials: int = 100,
                    seed: int = 0, chunk: int = 100, name: str | None = None) -> AccuracyReport:
    """Monte Carlo per-class error of ``estimator`` on noisy broadcast samples.

    ``estimator`` is a name accepted by :func:`make_estimator` or a batch
    callable.  Trials run in chunks of ``chunk``; chunk ``i`` draws from
    ``substream(seed, i)``, so results do not depend on how work is split.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rows = as_rows(M)
    q = rows.shape[0]
    nu = as_prior(nu, q)
    if isinstance(estimator, str):
        name = name or estimator
        estimator = make_estimator(estimator, t, rows, nu, eps)
    n_tr = np.zeros(q, dtype=np.int64)
    n_err = np.zeros(q, dtype=np.int64)
    for i, start in enumerate(range(0, trials, chunk)):
        n = min(chunk, trials - start)
        roots, leaves = sample_leaves(t, rows, nu, n, substream(seed, i), eps)
        guess = np.asarray(estimator(leaves))
        roots = roots.astype(np.int64)
        n_tr += np.bincount(roots, minlength=q)
        n_err += np.bincount(roots[guess != roots], minlength=q)
    return AccuracyReport(name or getattr(estimator, "__name__", "custom"), t.d, t.depth, eps, n_tr, n_err)


def exact_row_match_error(t: TreeTopology, M, eps: float = 0.0,
                          config: RowMatchConfig = RowMatchConfig()) -> np.ndarray:
    """Per-class error probability of :func:`row_match_root`, computed exactly."""
    K = row_match_confusion(M, t.d, t.depth, eps, config)[-1]
    return 1.0 - np.diag(K)


def exact_bayes_error(t: TreeTopology, M, nu, eps: float = 0.0) -> float:
    """``1 - sum_x max_c P(c, x)`` by enumerating every leaf configuration."""
    from .exact import leaf_subset_law

    q = as_rows(M).shape[0]
    table = leaf_subset_law(t, M, nu, range(t.n_leaves), eps).table.reshape(q, -1)
    return float(1.0 - table.max(axis=0).sum())


def exact_estimator_error(t: TreeTopology, M, nu, estimator, eps: float = 0.0) -> np.ndarray:
    """Per-class error of a deterministic estimator by enumerating all leaf configurations."""
    from .exact import leaf_subset_law

    q = as_rows(M).shape[0]
    nu = as_prior(nu, q)
    cond = leaf_subset_law(t, M, nu, range(t.n_leaves), eps).conditional()
    guess = np.asarray(estimator(all_configs(q, t.n_leaves)))
    return np.array([float(cond[c][guess != c].sum()) for c in range(q)])
