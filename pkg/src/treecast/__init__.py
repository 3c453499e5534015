"""Markov broadcast processes on complete d-ary trees: sampling, exact
oracles, root estimators and unknown-tree reconstruction."""

from . import broadcast, chains, estimators, exact, phylo, trees
from .chains import TransitionMatrix, bsc, example_chain, uniform_chain
from .errors import TreecastError
from .trees import build

__all__ = [
    "broadcast", "chains", "estimators", "exact", "phylo", "trees",
    "TransitionMatrix", "bsc", "example_chain", "uniform_chain", "TreecastError", "build",
]
