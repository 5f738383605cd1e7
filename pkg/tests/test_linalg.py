import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagdim.errors import DimensionMismatchError, IllConditionedSplittingError, UndefinedAngleError
from flagdim.linalg import (
    Splitting,
    Subspace,
    min_principal_angle,
    oblique_projection,
    orthonormalize,
    span,
    subspace_distance,
    subspace_intersection,
    subspace_sum,
    zero_subspace,
)

E = np.eye(4)


def gram_schmidt(vectors, tol=1e-10):
    out = []
    for v in vectors:
        w = np.array(v, dtype=float)
        for q in out:
            w = w - (q @ w) * q
        if np.linalg.norm(w) > tol * max(1.0, np.linalg.norm(v)):
            out.append(w / np.linalg.norm(w))
    return np.array(out).T


def random_subspace(seed, d, k):
    return orthonormalize(np.random.default_rng(seed).standard_normal((d, k)))


def test_orthonormalize_identity():
    s = orthonormalize(np.eye(3))
    assert s.rank == 3
    assert np.allclose(s.projector, np.eye(3))


def test_orthonormalize_dependent_vectors():
    s = orthonormalize([(1, 0), (2, 0)])
    assert s.rank == 1
    assert s.contains([1, 0]) and not s.contains([0, 1])


def test_orthonormalize_matches_gram_schmidt():
    v = np.random.default_rng(0).standard_normal((5, 3))
    s = orthonormalize(list(v))
    q = gram_schmidt(list(v))
    assert s.rank == 3
    assert np.allclose(s.projector, q @ q.T, atol=1e-12)


def test_orthonormalize_empty_is_zero_subspace():
    assert orthonormalize([], ambient_dim=3).rank == 0
    with pytest.raises(DimensionMismatchError):
        orthonormalize([(1, 0), (1, 0, 0)])


def test_sum_examples():
    a, b = span(E[0]), span(E[1])
    assert subspace_sum(a, b).equals(span(E[0], E[1]))
    assert subspace_sum(a, a).equals(a)
    with pytest.raises(DimensionMismatchError):
        subspace_sum(a, span([1.0, 0.0]))


def test_sum_rank_matches_svd_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = orthonormalize(rng.standard_normal((4, rng.integers(1, 4))))
        b = orthonormalize(rng.standard_normal((4, rng.integers(1, 4))))
        oracle = np.linalg.matrix_rank(np.hstack([a.basis, b.basis]))
        assert subspace_sum(a, b).rank == oracle


def test_intersection_examples():
    a = span(E[0], E[1])
    b = span(E[1], E[2])
    assert subspace_intersection(a, b).equals(span(E[1]))
    assert subspace_intersection(a, a).equals(a)
    assert subspace_intersection(span(E[0]), span(E[1])).rank == 0


def test_intersection_dimension_count():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = orthonormalize(rng.standard_normal((3, 2)))
        b = orthonormalize(rng.standard_normal((3, 2)))
        c = subspace_intersection(a, b)
        assert c.rank == a.rank + b.rank - subspace_sum(a, b).rank == 1
        assert a.contains(c.basis) and b.contains(c.basis)


def test_principal_angle_examples():
    assert min_principal_angle(span(E[0]), span(E[1])) == pytest.approx(np.pi / 2)
    assert min_principal_angle(span(E[0]), span(E[0])) == pytest.approx(0, abs=1e-12)
    assert min_principal_angle(span(E[0]), span(E[0] + E[1])) == pytest.approx(np.arccos(1 / np.sqrt(2)))
    with pytest.raises(UndefinedAngleError):
        min_principal_angle(zero_subspace(4), span(E[0]))


def test_oblique_projection_examples():
    sp = Splitting.from_bases([np.eye(3)[:, [k]] for k in range(3)])
    assert np.allclose(oblique_projection(sp, 1), np.diag([0, 1, 0]))
    rng = np.random.default_rng(3)
    b = rng.standard_normal((4, 4))
    sp = Splitting.from_bases([b[:, :1], b[:, 1:3], b[:, 3:]])
    ps = [oblique_projection(sp, i) for i in range(3)]
    assert np.allclose(sum(ps), np.eye(4))
    for i, p in enumerate(ps):
        assert np.allclose(p @ p, p, atol=1e-9)
        for j in range(3):
            v = sp[j].basis
            assert np.allclose(p @ v, v if i == j else 0, atol=1e-9)


def test_ill_conditioned_splitting_is_an_error():
    b = np.array([[1.0, 1.0], [0.0, 1e-14]])
    sp = Splitting.from_bases([b[:, :1], b[:, 1:]])
    with pytest.raises(IllConditionedSplittingError):
        sp.inverse


def test_splitting_dimension_check():
    with pytest.raises(DimensionMismatchError):
        Splitting.from_bases([np.eye(3)[:, :1], np.eye(3)[:, 1:2]])


dims = st.integers(min_value=2, max_value=6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), dims, st.data())
def test_dimension_formula(seed, d, data):
    ka = data.draw(st.integers(1, d))
    kb = data.draw(st.integers(1, d))
    a, b = random_subspace(seed, d, ka), random_subspace(seed + 1, d, kb)
    assert subspace_sum(a, b).rank + subspace_intersection(a, b).rank == a.rank + b.rank


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), dims, st.data())
def test_orthonormal_basis_invariant(seed, d, data):
    k = data.draw(st.integers(0, d + 2))
    s = orthonormalize(np.random.default_rng(seed).standard_normal((d, k)))
    assert 0 <= s.rank <= d
    assert np.allclose(s.basis.T @ s.basis, np.eye(s.rank), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), dims, st.data())
def test_angle_symmetric_and_zero_iff_meeting(seed, d, data):
    ka = data.draw(st.integers(1, d - 1))
    kb = data.draw(st.integers(1, d - 1))
    a, b = random_subspace(seed, d, ka), random_subspace(seed + 7, d, kb)
    ab, ba = min_principal_angle(a, b), min_principal_angle(b, a)
    assert ab == pytest.approx(ba, abs=1e-12)
    meets = subspace_intersection(a, b).rank > 0
    assert meets == (ka + kb > d)
    assert (ab < 1e-7) == meets


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), dims)
def test_distance_is_a_metric_on_lines(seed, d):
    a, b, c = (random_subspace(seed + k, d, 1) for k in range(3))
    assert subspace_distance(a, a) == pytest.approx(0, abs=1e-7)
    assert subspace_distance(a, c) <= subspace_distance(a, b) + subspace_distance(b, c) + 1e-12


def test_subspace_rejects_non_matrix():
    with pytest.raises(DimensionMismatchError):
        Subspace(np.zeros(3))
