"""Sampling the broadcast process, the leaf noise operator and the repeated
unknown-tree model.

Randomness comes from numpy ``Generator`` objects.  Anything accepting a
``seed`` also accepts a ``Generator``; independent streams for sample ``i``
of master seed ``s`` are derived with :func:`substream`.  Draws are made level
by level from the root, so results depend only on the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import trees
from .chains import TransitionMatrix, as_rows, validate
from .errors import DomainError
from .trees import LeafPermutation, TreeTopology

PRIOR_TOL = 1e-12


def rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for work item ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def label_dtype(q: int):
    return np.int8 if q <= 127 else np.int32


def as_prior(nu, q: int) -> np.ndarray:
    if nu is None:
        return np.full(q, 1.0 / q)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (q,):
        raise DomainError(f"prior must have shape ({q},), got {nu.shape}")
    if np.any(nu < 0) or abs(nu.sum() - 1.0) > PRIOR_TOL:
        raise DomainError("prior must be a probability vector")
    return nu


def uniform_prior(q: int) -> np.ndarray:
    return np.full(q, 1.0 / q)


def biased_prior(y_star: int, q: int, weight: float = 2 / 3) -> np.ndarray:
    """``weight * delta(y_star) + (1 - weight) * Uniform([q])``."""
    nu = np.full(q, (1.0 - weight) / q)
    nu[y_star] += weight
    return nu


def noise_matrix(q: int, eps: float) -> np.ndarray:
    """Single-coordinate noise channel: keep w.p. ``1-eps``, else uniform."""
    return (1.0 - eps) * np.eye(q) + (eps / q) * np.ones((q, q))


def _cumulative(rows: np.ndarray) -> np.ndarray:
    cum = np.cumsum(rows, axis=1)
    cum[:, -1] = 1.0
    return cum


def _draw(cum: np.ndarray, parents: np.ndarray, u: np.ndarray, dtype) -> np.ndarray:
    out = np.empty(u.shape, dtype=dtype)
    for a in range(cum.shape[0]):
        sel = parents == a
        if sel.any():
            out[sel] = np.searchsorted(cum[a], u[sel], side="right")
    return out


def broadcast_batch(
    t: TreeTopology,
    M,
    roots: np.ndarray,
    rng: np.random.Generator,
    keep_internal: bool = False,
):
    """Run the process below the given root labels.

    Parameters
    ----------
    roots : ndarray, shape (n,)
    keep_internal : bool
        If true return per-level label arrays ``[(n, 1), (n, d), ...]``;
        otherwise only the leaf array of shape ``(n, N)``.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    dtype = label_dtype(q)
    cum = _cumulative(rows)
    cur = np.asarray(roots, dtype=dtype).reshape(-1, 1)
    levels = [cur] if keep_internal else None
    for _ in range(t.depth):
        parents = np.repeat(cur, t.d, axis=1)
        u = rng.random(parents.shape)
        cur = _draw(cum, parents, u, dtype)
        if keep_internal:
            levels.append(cur)
    return levels if keep_internal else cur


def sample_roots(nu: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(nu)
    cum[-1] = 1.0
    return np.searchsorted(cum, rng.random(n), side="right").astype(label_dtype(len(nu)))


@dataclass(frozen=True, eq=False)
class BroadcastSample:
    """One realization; ``labels`` is indexed by vertex id (level order)."""

    tree: TreeTopology
    labels: np.ndarray

    @property
    def root(self) -> int:
        return int(self.labels[0])

    @property
    def leaf_view(self) -> np.ndarray:
        return self.labels[self.tree.first_leaf :]


def sample_broadcast(t: TreeTopology, M, nu=None, seed=None) -> BroadcastSample:
    rows = as_rows(M)
    rng = rng_from(seed)
    nu = as_prior(nu, rows.shape[0])
    root = sample_roots(nu, 1, rng)
    levels = broadcast_batch(t, rows, root, rng, keep_internal=True)
    labels = np.concatenate([lv[0] for lv in levels])
    return BroadcastSample(t, labels)


def sample_leaves(t: TreeTopology, M, nu, n: int, seed=None, eps: float = 0.0):
    """Draw ``n`` independent samples; returns ``(roots, leaves)``.

    ``leaves`` has shape ``(n, N)`` in tree-position order and has had the
    ``eps`` noise applied.
    """
    rows = as_rows(M)
    rng = rng_from(seed)
    nu = as_prior(nu, rows.shape[0])
    roots = sample_roots(nu, n, rng)
    leaves = broadcast_batch(t, rows, roots, rng)
    if eps:
        leaves = apply_noise(leaves, eps, rows.shape[0], rng).values
    return roots, leaves


@dataclass(frozen=True, eq=False)
class NoisyLeaves:
    values: np.ndarray
    noise_mask: np.ndarray
    eps: float


def apply_noise(x, eps: float, q: int, seed=None) -> NoisyLeaves:
    """Independently replace each coordinate, w.p. ``eps``, by a uniform label.

    The uniform draw may coincide with the original value.
    """
    if not 0.0 <= eps < 1.0:
        raise DomainError(f"noise rate must lie in [0, 1), got {eps}")
    x = np.asarray(x)
    rng = rng_from(seed)
    mask = rng.random(x.shape) < eps
    fresh = rng.integers(0, q, size=x.shape).astype(x.dtype)
    return NoisyLeaves(np.where(mask, fresh, x), mask, eps)


@dataclass(frozen=True)
class RepeatedParams:
    d: int
    depth: int
    m: int
    eps: float
    M: TransitionMatrix

    def __post_init__(self):
        object.__setattr__(self, "M", validate(self.M))
        if self.m < 0:
            raise DomainError("m must be nonnegative")
        if not 0.0 <= self.eps < 1.0:
            raise DomainError(f"noise rate must lie in [0, 1), got {self.eps}")

    @property
    def q(self) -> int:
        return self.M.q

    @property
    def tree(self) -> TreeTopology:
        return trees.build(self.d, self.depth)

    def to_dict(self) -> dict:
        return {"d": self.d, "depth": self.depth, "m": self.m, "eps": self.eps,
                "q": self.q, "rows": self.M.rows.tolist()}


@dataclass(frozen=True, eq=False)
class RepeatedDataset:
    """``m`` shuffled, noisy leaf vectors sharing a hidden ``(y_star, tau)``.

    ``samples[i]`` is in *observed* coordinate order.
    """

    params: RepeatedParams
    samples: np.ndarray
    y_star: int
    tau: LeafPermutation


def draw_repeated_samples(params: RepeatedParams, y_star: int, tau: LeafPermutation, n: int, rng):
    """Fresh samples from the repeated model with a fixed hidden state."""
    nu = biased_prior(y_star, params.q)
    _, leaves = sample_leaves(params.tree, params.M, nu, n, rng)
    observed = tau.to_observed(leaves)
    if params.eps:
        observed = apply_noise(observed, params.eps, params.q, rng).values
    return observed


def sample_repeated(params: RepeatedParams, seed=None) -> RepeatedDataset:
    """Draw ``Y*`` and ``tau`` uniformly, then ``m`` samples.

    Noise is applied after shuffling; the two orders give the same law.
    """
    rng = rng_from(seed)
    t = params.tree
    y_star = int(rng.integers(0, params.q))
    tau = LeafPermutation(tuple(int(i) for i in rng.permutation(t.n_leaves)))
    samples = draw_repeated_samples(params, y_star, tau, params.m, rng)
    return RepeatedDataset(params, samples, y_star, tau)


def write_dataset(ds: RepeatedDataset, path: str | Path) -> Path:
    """Write JSON-lines samples to ``path`` and the hidden state to a sidecar.

    Returns the sidecar path (``<path>.secret.json``).
    """
    path = Path(path)
    with path.open("w") as fh:
        for i, row in enumerate(ds.samples):
            fh.write(json.dumps({"sample_index": i, "leaves": [int(x) for x in row]}) + "\n")
    secret = path.with_name(path.name + ".secret.json")
    secret.write_text(json.dumps({"y_star": ds.y_star, "tau": list(ds.tau.tau),
                                  "params": ds.params.to_dict()}, sort_keys=True) + "\n")
    return secret


def read_samples(path: str | Path) -> np.ndarray:
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line)["leaves"])
    return np.asarray(rows, dtype=np.int64)


def read_dataset(path: str | Path) -> RepeatedDataset:
    path = Path(path)
    secret = json.loads(path.with_name(path.name + ".secret.json").read_text())
    p = secret["params"]
    params = RepeatedParams(p["d"], p["depth"], p["m"], p["eps"], validate(p["rows"]))
    samples = read_samples(path)
    if samples.size == 0:
        samples = np.zeros((0, params.tree.n_leaves), dtype=np.int64)
    return RepeatedDataset(params, samples, int(secret["y_star"]), LeafPermutation(tuple(secret["tau"])))

