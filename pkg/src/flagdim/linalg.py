"""Subspaces of R^d, direct-sum splittings and oblique projections.

Subspaces are stored by an orthonormal basis.  Two subspaces are considered
equal when their largest principal angle is below ``EQUAL_TOL``.  Rank
decisions for sums and intersections use one relative singular-value cutoff,
``RANK_TOL``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    IllConditionedSplittingError,
    UndefinedAngleError,
)

RANK_TOL = 1e-8
ORTHO_TOL = 1e-10
EQUAL_TOL = 1e-8
MAX_SPLITTING_COND = 1e12

__all__ = [
    "Subspace",
    "Splitting",
    "orthonormalize",
    "subspace_sum",
    "subspace_intersection",
    "min_principal_angle",
    "subspace_distance",
    "oblique_projection",
    "oblique_projections",
    "span",
    "zero_subspace",
    "full_space",
    "RANK_TOL",
]


@dataclass(frozen=True, eq=False)
class Subspace:
    """A linear subspace given by a d x k matrix with orthonormal columns."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2:
            raise DimensionMismatchError("basis must be a 2-d array")
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    dim = rank

    @cached_property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @cached_property
    def complement(self) -> "Subspace":
        """Orthogonal complement."""
        d, k = self.basis.shape
        if k == 0:
            return full_space(d)
        if k == d:
            return zero_subspace(d)
        q, _ = np.linalg.qr(self.basis, mode="complete")
        return Subspace(q[:, k:])

    def contains(self, v, tol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        resid = v - self.basis @ (self.basis.T @ v)
        scale = max(np.linalg.norm(v), 1.0)
        return bool(np.linalg.norm(resid) <= tol * scale)

    def image(self, matrix) -> "Subspace":
        """Image of the subspace under an invertible linear map."""
        return orthonormalize(np.asarray(matrix, dtype=float) @ self.basis)

    def equals(self, other: "Subspace", tol: float = EQUAL_TOL) -> bool:
        if self.ambient_dim != other.ambient_dim or self.rank != other.rank:
            return False
        if self.rank == 0:
            return True
        return subspace_distance(self, other) < tol

    def __repr__(self):
        return f"Subspace(ambient_dim={self.ambient_dim}, rank={self.rank})"


def zero_subspace(d: int) -> Subspace:
    return Subspace(np.zeros((d, 0)))


def full_space(d: int) -> Subspace:
    return Subspace(np.eye(d))


def orthonormalize(vectors, tol: float = ORTHO_TOL, ambient_dim: int | None = None) -> Subspace:
    """Orthonormal basis for the span of ``vectors``.

    ``vectors`` is either a d x m array (columns are the vectors) or a
    sequence of length-d vectors.  The rank is the number of singular values
    above ``tol`` times the largest one.
    """
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        a = vectors.astype(float, copy=False)
    else:
        vecs = [np.asarray(v, dtype=float) for v in vectors]
        if not vecs:
            if ambient_dim is None:
                raise DimensionMismatchError("ambient_dim required for empty input")
            return zero_subspace(ambient_dim)
        lengths = {v.shape for v in vecs}
        if len(lengths) != 1:
            raise DimensionMismatchError("vectors have different lengths")
        a = np.column_stack(vecs)
    d, m = a.shape
    if m == 0:
        return zero_subspace(d)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return zero_subspace(d)
    r = int(np.sum(s > tol * s[0]))
    if r == m and m <= d:
        # full column rank: keep the QR basis, whose leading columns span
        # the leading input vectors (callers rely on this for nested flags)
        q, _ = np.linalg.qr(a)
        return Subspace(q)
    return Subspace(u[:, :r])


def span(*vectors) -> Subspace:
    return orthonormalize([np.asarray(v, dtype=float) for v in vectors])


def _check_same_ambient(a: Subspace, b: Subspace):
    if a.ambient_dim != b.ambient_dim:
        raise DimensionMismatchError(
            f"ambient dimensions differ: {a.ambient_dim} != {b.ambient_dim}"
        )


def subspace_sum(a: Subspace, b: Subspace, tol: float = RANK_TOL) -> Subspace:
    _check_same_ambient(a, b)
    if a.rank == 0:
        return b
    if b.rank == 0:
        return a
    return orthonormalize(np.hstack([a.basis, b.basis]), tol=tol)


def subspace_intersection(a: Subspace, b: Subspace, tol: float = RANK_TOL) -> Subspace:
    """Intersection as the common null space of both orthogonal complements."""
    _check_same_ambient(a, b)
    d = a.ambient_dim
    if a.rank == 0 or b.rank == 0:
        return zero_subspace(d)
    constraints = np.hstack([a.complement.basis, b.complement.basis]).T
    if constraints.shape[0] == 0:
        return full_space(d)
    _, s, vt = np.linalg.svd(constraints, full_matrices=True)
    # rows of the constraint matrix are orthonormal within each block, so
    # singular values live in [0, sqrt(2)] and the cutoff is effectively absolute
    s_full = np.zeros(d)
    s_full[: s.size] = s
    null = vt[s_full <= tol].T
    return Subspace(null) if null.size else zero_subspace(d)


def _cos_sin(a: Subspace, b: Subspace):
    if a.rank > b.rank:
        a, b = b, a
    cos = np.linalg.svd(a.basis.T @ b.basis, compute_uv=False)
    resid = a.basis - b.basis @ (b.basis.T @ a.basis)
    sin = np.linalg.svd(resid, compute_uv=False)
    # cos sorted descending and sin sorted descending pair up in reverse
    k = a.rank
    cos = np.clip(cos[:k], 0.0, 1.0)
    sin = np.clip(sin[:k][::-1], 0.0, 1.0)
    return cos, sin


def principal_angles(a: Subspace, b: Subspace) -> np.ndarray:
    """Principal angles in ascending order (min(rank) of them)."""
    _check_same_ambient(a, b)
    if a.rank == 0 or b.rank == 0:
        return np.zeros(0)
    cos, sin = _cos_sin(a, b)
    return np.arctan2(sin, cos)


def min_principal_angle(a: Subspace, b: Subspace) -> float:
    """Smallest angle between unit vectors of ``a`` and ``b``, in [0, pi/2]."""
    if a.rank == 0 or b.rank == 0:
        raise UndefinedAngleError("angle with the zero subspace is undefined")
    return float(principal_angles(a, b)[0])


def subspace_distance(a: Subspace, b: Subspace) -> float:
    """Grassmannian distance: the largest principal angle (equal ranks)."""
    _check_same_ambient(a, b)
    if a.rank != b.rank:
        raise DimensionMismatchError("distance needs subspaces of equal rank")
    if a.rank == 0:
        return 0.0
    return float(principal_angles(a, b)[-1])


@dataclass(frozen=True, eq=False)
class Splitting:
    """Ordered direct-sum decomposition R^d = V_1 + ... + V_N."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise DimensionMismatchError("a splitting needs at least one part")
        d = parts[0].ambient_dim
        if any(p.ambient_dim != d for p in parts):
            raise DimensionMismatchError("parts live in different ambient spaces")
        if sum(p.rank for p in parts) != d:
            raise DimensionMismatchError(
                f"part dimensions {[p.rank for p in parts]} do not sum to {d}"
            )
        object.__setattr__(self, "parts", parts)

    @classmethod
    def from_bases(cls, bases: Sequence) -> "Splitting":
        return cls(tuple(orthonormalize(np.asarray(b, dtype=float)) for b in bases))

    @property
    def ambient_dim(self) -> int:
        return self.parts[0].ambient_dim

    @property
    def dims(self) -> tuple:
        return tuple(p.rank for p in self.parts)

    def __len__(self):
        return len(self.parts)

    def __getitem__(self, i) -> Subspace:
        return self.parts[i]

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.hstack([p.basis for p in self.parts])

    @cached_property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    @cached_property
    def inverse(self) -> np.ndarray:
        if not np.isfinite(self.condition_number) or self.condition_number > MAX_SPLITTING_COND:
            raise IllConditionedSplittingError(
                f"splitting basis has condition number {self.condition_number:.3g}"
            )
        return np.linalg.inv(self.matrix)

    @cached_property
    def projections(self) -> tuple:
        b, binv, off = self.matrix, self.inverse, self.offsets
        return tuple(
            b[:, off[i] : off[i + 1]] @ binv[off[i] : off[i + 1], :]
            for i in range(len(self.parts))
        )

    def sum_of(self, indices) -> Subspace:
        idx = sorted(indices)
        d = self.ambient_dim
        if not idx:
            return zero_subspace(d)
        if len(idx) == 1:
            return self.parts[idx[0]]
        return orthonormalize(np.hstack([self.parts[i].basis for i in idx]))

    def transform(self, g) -> "Splitting":
        """The splitting (g V_1, ..., g V_N)."""
        return Splitting(tuple(p.image(g) for p in self.parts))


def oblique_projection(split: Splitting, i: int) -> np.ndarray:
    """Projection onto V_i along the sum of the other parts."""
    return split.projections[i]


def oblique_projections(split: Splitting) -> tuple:
    return split.projections
