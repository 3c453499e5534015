"""Shared fixtures and an independent brute-force oracle.

The oracle below enumerates every labelling of the whole tree with
itertools and never calls the package's dynamic programs, so tests can
compare the two routes.
"""

import itertools

import numpy as np
import pytest

from treecast import chains, trees

EXAMPLE_ROWS = [[0.5, 0.0, 0.5], [0.25, 0.5, 0.25], [0.0, 1.0, 0.0]]


def brute_joint(d, depth, rows, nu=None, eps=0.0):
    """``P(root=c, noisy leaves=x)`` as an array of shape ``(q, q**N)``.

    Leaf configurations are indexed in row-major order over tree positions.
    """
    rows = np.asarray(rows, dtype=float)
    q = rows.shape[0]
    nu = np.full(q, 1.0 / q) if nu is None else np.asarray(nu, dtype=float)
    n_vert = (d ** (depth + 1) - 1) // (d - 1)
    first_leaf = (d**depth - 1) // (d - 1)
    N = d**depth
    noise = (1 - eps) * np.eye(q) + eps / q
    clean = np.zeros((q,) + (q,) * N)
    for lab in itertools.product(range(q), repeat=n_vert):
        p = nu[lab[0]]
        for v in range(1, n_vert):
            p *= rows[lab[(v - 1) // d], lab[v]]
            if p == 0:
                break
        if p:
            clean[(lab[0],) + lab[first_leaf:]] += p
    # fold in leaf noise one axis at a time
    for axis in range(1, N + 1):
        clean = np.moveaxis(np.tensordot(clean, noise, axes=([axis], [0])), -1, axis)
    out = clean.reshape(q, -1)
    return out


def brute_subset_mi(joint, q, N, S):
    """Mutual information between root and the leaves in ``S``, from a full joint."""
    table = joint.reshape((q,) + (q,) * N)
    drop = tuple(1 + j for j in range(N) if j not in S)
    marg = table.sum(axis=drop).reshape(q, -1)
    pc = marg.sum(axis=1, keepdims=True)
    px = marg.sum(axis=0, keepdims=True)
    mask = marg > 0
    return float(np.sum(marg[mask] * np.log(marg[mask] / (pc * px)[mask])))


@pytest.fixture
def example():
    return chains.example_chain()


@pytest.fixture
def bsc08():
    return chains.bsc(0.8)


@pytest.fixture
def binary_tree2():
    return trees.build(2, 2)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
