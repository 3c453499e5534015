"""Broadcast channels: construction, validation and spectral analysis.

A channel is a row-stochastic ``q x q`` matrix ``M``; row ``a`` is the law of
a child's label given that its parent carries label ``a``.  Labels are the
integers ``0 .. q-1`` throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from .errors import DegenerateChannel, DomainError, NegativeEntry, NonStochastic, NotErgodic

ROW_SUM_TOL = 1e-9
RANK_RTOL = 1e-9
DISTINCT_ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Validated broadcast channel.

    Instances are produced by :func:`validate`; ``rows`` is a read-only
    float array.
    """

    rows: np.ndarray
    ergodic: bool

    @property
    def q(self) -> int:
        return self.rows.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.rows if dtype is None else self.rows.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return self.rows.shape == other.rows.shape and bool(np.array_equal(self.rows, other.rows))

    def __hash__(self):
        return hash(self.rows.tobytes())

    def __repr__(self):
        return f"TransitionMatrix(q={self.q}, ergodic={self.ergodic}, rows={self.rows.tolist()})"

    def power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.rows, k)

    def to_json(self) -> str:
        return json.dumps({"q": self.q, "rows": self.rows.tolist()})


@dataclass(frozen=True)
class SpectralData:
    """Spectral summary of a channel.

    Attributes
    ----------
    lambda2_modulus : float
        Modulus of the second-largest eigenvalue (exactly 0.0 when some power
        of ``M`` is rank one).
    lambda2 : complex
        The eigenvalue itself; 0 when ``lambda2_modulus`` is 0.
    second_eigenvector : ndarray or None
        Unit-norm right eigenvector for ``lambda2``; present iff it is nonzero.
    rank_one_power : int or None
        Smallest ``k`` with ``M^k`` of numerical rank one.
    generalized_eigvec : ndarray or None
        Unit vector with ``M phi != 0`` and ``M^2 phi = 0``; present iff
        ``lambda2 = 0`` and ``M`` itself is not rank one.
    """

    lambda2_modulus: float
    lambda2: complex
    second_eigenvector: np.ndarray | None
    rank_one_power: int | None
    generalized_eigvec: np.ndarray | None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _is_primitive(rows: np.ndarray) -> bool:
    # Wielandt: a nonnegative q x q matrix is primitive iff its ((q-1)^2+1)-th
    # power is entrywise positive; primitive <=> irreducible and aperiodic.
    q = rows.shape[0]
    support = (rows > 0).astype(np.int64)
    reach = support.copy()
    for _ in range((q - 1) ** 2):
        reach = np.minimum(reach @ support, 1)
    return bool(reach.all())


def validate(raw) -> TransitionMatrix:
    """Check that ``raw`` is a row-stochastic matrix and wrap it.

    Rows are never renormalized: a row sum off by more than ``1e-9`` raises
    :class:`NonStochastic`.  Ergodicity is reported as a flag.
    """
    if isinstance(raw, TransitionMatrix):
        return raw
    rows = np.asarray(raw, dtype=float)
    if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
        raise NonStochastic(f"expected a square matrix, got shape {rows.shape}")
    if rows.shape[0] < 2:
        raise DomainError("alphabet size q must be at least 2")
    if not np.all(np.isfinite(rows)):
        raise NonStochastic("matrix has non-finite entries")
    if np.any(rows < 0):
        i, j = np.argwhere(rows < 0)[0]
        raise NegativeEntry(f"entry ({i}, {j}) = {rows[i, j]} is negative")
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise NonStochastic(f"row {bad[0]} sums to {sums[bad[0]]!r}")
    return TransitionMatrix(rows=_readonly(rows), ergodic=_is_primitive(rows))


def as_rows(M) -> np.ndarray:
    """Return the float row array of a channel, validating raw input."""
    return validate(M).rows


def bsc(theta: float) -> TransitionMatrix:
    """Binary symmetric channel with second eigenvalue ``theta``."""
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    a, b = (1 + theta) / 2, (1 - theta) / 2
    return validate([[a, b], [b, a]])


def example_chain() -> TransitionMatrix:
    """Three-state chain with ``lambda2 = 0`` and ``M^2`` rank one."""
    return validate([[0.5, 0.0, 0.5], [0.25, 0.5, 0.25], [0.0, 1.0, 0.0]])


def uniform_chain(q: int) -> TransitionMatrix:
    """Rank-one channel whose rows are all uniform."""
    return validate(np.full((q, q), 1.0 / q))


def stationary(M) -> np.ndarray:
    """Unique stationary distribution of an ergodic channel."""
    tm = validate(M)
    if not tm.ergodic:
        raise NotErgodic("stationary distribution is not unique for a non-ergodic chain")
    q = tm.q
    # pi (M - I) = 0 together with sum(pi) = 1, solved in the least-squares sense.
    A = np.vstack([tm.rows.T - np.eye(q), np.ones((1, q))])
    b = np.zeros(q + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def numerical_rank(A: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def rank_one_power(M) -> int | None:
    """Smallest ``k`` with ``M^k`` of numerical rank one, or None.

    Only ``k <= max(1, q-1)`` is searched: when ``lambda_2 = 0`` the nilpotent
    part has index at most ``q-1``, and larger powers are numerically rank
    one merely because ``|lambda_2|^k`` fell below the tolerance.  For the
    same reason ``k > 1`` is accepted only if ``rank(M^2) < rank(M)``, i.e. a
    genuine nilpotent block exists.
    """
    rows = as_rows(M)
    P = np.eye(rows.shape[0])
    for k in range(1, max(1, rows.shape[0] - 1) + 1):
        P = P @ rows
        if numerical_rank(P) == 1:
            if k > 1 and numerical_rank(rows @ rows) == numerical_rank(rows):
                return None
            return k
    return None


def _null_projector(A: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    _, s, vh = np.linalg.svd(A)
    r = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0
    basis = vh[r:].conj().T
    return basis @ basis.conj().T


def _fix_phase(v: np.ndarray) -> np.ndarray:
    # Deterministic representative: unit norm, first significant entry real positive.
    v = v / np.linalg.norm(v)
    idx = np.flatnonzero(np.abs(v) > 1e-8)[0]
    v = v * (abs(v[idx]) / v[idx])
    return np.real_if_close(v, tol=1000)


def generalized_eigvec(M) -> np.ndarray:
    """Unit vector in ``null(M^2)`` orthogonal to ``null(M)``.

    The standard basis vectors are projected in index order and the first
    projection with non-negligible norm is returned.
    """
    rows = as_rows(M)
    q = rows.shape[0]
    P2 = _null_projector(rows @ rows)
    P1 = _null_projector(rows)
    proj = (np.eye(q) - P1) @ P2
    for i in range(q):
        w = proj[:, i]
        if np.linalg.norm(w) > 1e-6:
            return _fix_phase(w)
    raise DegenerateChannel("null(M^2) equals null(M): no generalized eigenvector")


def spectral(M, require_phi: bool = False) -> SpectralData:
    """Second eigenvalue, rank-one power and contraction vectors of ``M``.

    Parameters
    ----------
    M : TransitionMatrix or array_like
    require_phi : bool
        When true and ``lambda2 = 0`` but no generalized eigenvector exists
        (the rank-one case), raise :class:`DegenerateChannel`.
    """
    rows = as_rows(M)
    k = rank_one_power(rows)
    if k is not None:
        phi = None
        if k > 1:
            phi = generalized_eigvec(rows)
        elif require_phi:
            raise DegenerateChannel("rank-one channel has no generalized eigenvector")
        return SpectralData(0.0, 0j, None, k, phi)

    vals, vecs = np.linalg.eig(rows)
    perron = int(np.argmin(np.abs(vals - 1.0)))
    rest = [i for i in np.argsort(-np.abs(vals), kind="stable") if i != perron]
    i2 = rest[0]
    lam = complex(vals[i2])
    v = _fix_phase(vecs[:, i2])
    return SpectralData(abs(lam), lam, v, None, None)


def has_distinct_rows(M) -> bool:
    rows = as_rows(M)
    q = rows.shape[0]
    for i in range(q):
        for j in range(i + 1, q):
            if np.max(np.abs(rows[i] - rows[j])) <= DISTINCT_ROW_TOL:
                return False
    return True


def contraction_vector(M) -> np.ndarray:
    """Vector used to contract pair moments in sibling statistics.

    The second right eigenvector when ``lambda2 != 0``; otherwise the
    generalized eigenvector with ``M phi != 0 = M^2 phi``.
    """
    rows = as_rows(M)
    if not has_distinct_rows(rows):
        raise DegenerateChannel("channel rows are not pairwise distinct")
    sd = spectral(rows, require_phi=True)
    if sd.second_eigenvector is not None:
        return sd.second_eigenvector
    return sd.generalized_eigvec


def load_chain(path: str | Path) -> TransitionMatrix:
    """Read ``{"q": int, "rows": [[...], ...]}``; decimals are parsed exactly."""
    doc = json.loads(Path(path).read_text(), parse_float=Decimal)
    rows = doc["rows"]
    q = int(doc["q"])
    if len(rows) != q or any(len(r) != q for r in rows):
        raise NonStochastic(f"rows do not form a {q} x {q} table")
    for i, r in enumerate(rows):
        total = sum(Decimal(x) for x in r)
        if abs(total - 1) > Decimal("1e-9"):
            raise NonStochastic(f"row {i} sums to {total}")
    return validate([[float(x) for x in r] for r in rows])


def save_chain(M, path: str | Path) -> None:
    Path(path).write_text(validate(M).to_json() + "\n")


def resolve_chain(spec: str) -> TransitionMatrix:
    """Builtin name (``example``, ``bsc:0.8``, ``uniform:3``) or a JSON file path."""
    if spec == "example":
        return example_chain()
    if spec.startswith("bsc:"):
        return bsc(float(spec[4:]))
    if spec.startswith("uniform:"):
        return uniform_chain(int(spec[8:]))
    p = Path(spec)
    if p.exists():
        return load_chain(p)
    raise DomainError(f"unknown chain {spec!r}")
