"""Complete d-ary tree topology, leaf permutations and canonical forms.

Vertices are numbered in level order with the root at 0, so the children of
``v`` are ``d*v + 1 .. d*v + d`` and leaves occupy the last ``N = d**depth``
ids.  Leaves are also addressed by *position* ``0 .. N-1`` (left to right).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SizeOverflow

MAX_VERTICES = 10_000_000


@dataclass(frozen=True)
class TreeTopology:
    d: int
    depth: int

    @property
    def n_leaves(self) -> int:
        return self.d**self.depth

    @property
    def n_vertices(self) -> int:
        return (self.d ** (self.depth + 1) - 1) // (self.d - 1)

    def level_start(self, level: int) -> int:
        return (self.d**level - 1) // (self.d - 1)

    def level(self, level: int) -> range:
        """Vertex ids at ``level`` (0 = root)."""
        start = self.level_start(level)
        return range(start, start + self.d**level)

    @property
    def first_leaf(self) -> int:
        return self.level_start(self.depth)

    def leaf_vertex(self, position: int) -> int:
        return self.first_leaf + position

    def leaf_position(self, vertex: int) -> int:
        return vertex - self.first_leaf

    def children(self, v: int) -> range:
        if self.vertex_depth(v) == self.depth:
            return range(0)
        return range(self.d * v + 1, self.d * v + self.d + 1)

    def parent(self, v: int) -> int | None:
        return None if v == 0 else (v - 1) // self.d

    def vertex_depth(self, v: int) -> int:
        if not 0 <= v < self.n_vertices:
            raise DomainError(f"vertex {v} not in tree")
        k = 0
        while v > 0:
            v = (v - 1) // self.d
            k += 1
        return k

    def ancestor(self, v: int, up: int) -> int:
        for _ in range(up):
            v = (v - 1) // self.d
        return v

    def leaves_under(self, v: int) -> range:
        """Leaf positions below vertex ``v`` (contiguous)."""
        h = self.depth - self.vertex_depth(v)
        lo = v
        for _ in range(h):
            lo = self.d * lo + 1
        return range(self.leaf_position(lo), self.leaf_position(lo) + self.d**h)


def build(d: int, depth: int, max_vertices: int = MAX_VERTICES) -> TreeTopology:
    if d < 2:
        raise DomainError(f"branching factor must be >= 2, got {d}")
    if depth < 0:
        raise DomainError(f"depth must be >= 0, got {depth}")
    t = TreeTopology(d, depth)
    if t.n_vertices > max_vertices:
        raise SizeOverflow(f"{t.n_vertices} vertices exceeds cap {max_vertices}")
    return t


def lca(t: TreeTopology, u: int, v: int) -> int:
    du, dv = t.vertex_depth(u), t.vertex_depth(v)
    if du > dv:
        u = t.ancestor(u, du - dv)
    else:
        v = t.ancestor(v, dv - du)
    while u != v:
        u, v = (u - 1) // t.d, (v - 1) // t.d
    return u


def graph_distance(t: TreeTopology, u: int, v: int) -> int:
    w = lca(t, u, v)
    return t.vertex_depth(u) + t.vertex_depth(v) - 2 * t.vertex_depth(w)


@dataclass(frozen=True)
class LeafPermutation:
    """Bijection between tree positions and observed coordinates.

    ``tau[j]`` is the observed coordinate that carries the value of the leaf
    at tree position ``j``; so observed ``x[tau[j]] == leaves[j]``.
    """

    tau: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.tau) != list(range(len(self.tau))):
            raise DomainError("tau is not a permutation")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.tau, dtype=np.int64)

    def inverse(self) -> LeafPermutation:
        inv = np.empty(len(self.tau), dtype=np.int64)
        inv[self.array] = np.arange(len(self.tau))
        return LeafPermutation(tuple(int(i) for i in inv))

    def compose(self, other: LeafPermutation) -> LeafPermutation:
        """``(self o other)[j] = self[other[j]]``."""
        return LeafPermutation(tuple(self.tau[j] for j in other.tau))

    def to_observed(self, leaves: np.ndarray) -> np.ndarray:
        """Reorder tree-position leaf values (last axis) into observed order."""
        leaves = np.asarray(leaves)
        out = np.empty_like(leaves)
        out[..., self.array] = leaves
        return out

    def to_tree(self, observed: np.ndarray) -> np.ndarray:
        return np.asarray(observed)[..., self.array]


def identity(t: TreeTopology) -> LeafPermutation:
    return LeafPermutation(tuple(range(t.n_leaves)))


def shuffle(t: TreeTopology, seed) -> LeafPermutation:
    rng = np.random.default_rng(seed)
    return LeafPermutation(tuple(int(i) for i in rng.permutation(t.n_leaves)))


def canonicalize(node):
    """Canonical nested-tuple form of a hierarchy of integer leaf labels.

    Children are sorted by their smallest leaf label, so the result is
    invariant under reordering children at every internal node.
    """
    if isinstance(node, (int, np.integer)):
        return int(node)
    kids = [canonicalize(c) for c in node]
    kids.sort(key=_min_label)
    return tuple(kids)


def _min_label(node) -> int:
    return node if isinstance(node, int) else _min_label(node[0])


def nested_groups(t: TreeTopology, tau: LeafPermutation):
    """Hierarchy of observed coordinates induced by placing ``tau`` on ``t``."""

    def rec(v):
        kids = t.children(v)
        if not kids:
            return tau.tau[t.leaf_position(v)]
        return [rec(c) for c in kids]

    return rec(0)


def canonical_form(t: TreeTopology, tau: LeafPermutation):
    return canonicalize(nested_groups(t, tau))


def canonical_to_json(form) -> str:
    def lists(x):
        return x if isinstance(x, int) else [lists(c) for c in x]

    return json.dumps(lists(form), separators=(",", ":"))


def canonical_from_json(text: str):
    return canonicalize(json.loads(text))


def permutation_from_groups(nested) -> LeafPermutation:
    """A leaf permutation whose tree (depth-first order) is ``nested``."""
    flat: list[int] = []

    def rec(x):
        if isinstance(x, (int, np.integer)):
            flat.append(int(x))
        else:
            for c in x:
                rec(c)

    rec(nested)
    return LeafPermutation(tuple(flat))
