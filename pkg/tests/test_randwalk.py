import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagdim.errors import MeasureError, ValidationError
from flagdim.randwalk import (
    MatrixMeasure,
    Word,
    accumulate,
    batch_factorize,
    dump_measure,
    factorize_product,
    first_moment,
    generic_frame,
    inverse_measure,
    load_measure,
    read_measure,
    rng_for,
    rotation,
    sample_word,
    shipped_measure,
    shipped_measures,
)


def spec_text(atoms, renormalize=False):
    return json.dumps({"d": len(atoms[0][1]), "renormalize": renormalize,
                       "atoms": [{"p": p, "m": np.asarray(m).tolist()} for p, m in atoms]})


def mp_log_singular_values(m, w, dps=80):
    """Log singular values of the word product, multiplied out in high precision."""
    mpmath.mp.dps = dps
    p = mpmath.eye(m.d)
    for k in w.application_order():
        p = mpmath.matrix(m.matrices[k].tolist()) * p
    s = mpmath.svd_r(p, compute_uv=False)
    return np.array(sorted((float(mpmath.log(x)) for x in s), reverse=True))


def test_load_point_mass():
    m = load_measure(spec_text([(1.0, np.diag([2, 0.5]))]))
    assert m.d == 2 and m.size == 1


def test_load_rejects_wrong_determinant():
    with pytest.raises(MeasureError):
        load_measure(spec_text([(0.5, np.diag([2, 0.5])), (0.5, np.diag([2, 1.0]))]))


def test_load_renormalizes_near_unit_determinant():
    m = load_measure(spec_text([(1.0, np.diag([2, 0.5 * (1 + 1e-5)]))], renormalize=True))
    assert abs(np.linalg.det(m.matrices[0]) - 1) <= 1e-12
    with pytest.raises(MeasureError):
        load_measure(spec_text([(1.0, np.diag([2, 0.5 * (1 + 1e-5)]))]))


@pytest.mark.parametrize("text", [
    "{not json",
    json.dumps({"d": 2, "atoms": [{"p": 0.7, "m": np.eye(2).tolist()}]}),
    json.dumps({"d": 2, "atoms": [{"p": 1.0, "m": [[1, 0, 0], [0, 1, 0]]}]}),
    json.dumps({"d": 3, "atoms": [{"p": 1.0, "m": np.eye(2).tolist()}]}),
    json.dumps({"d": 2, "atoms": [{"m": np.eye(2).tolist()}]}),
    json.dumps([1, 2]),
])
def test_load_rejections(text):
    with pytest.raises(MeasureError):
        load_measure(text)


def test_parse_error_carries_position():
    with pytest.raises(MeasureError, match="line 2"):
        load_measure('{"d": 2,\n "atoms": [,]}')


def test_round_trip_and_read(tmp_path):
    m = shipped_measure("sl3_hyperbolic")
    path = tmp_path / "m.json"
    path.write_text(dump_measure(m))
    back = read_measure(path)
    assert np.array_equal(back.matrices, m.matrices) and np.array_equal(back.probs, m.probs)
    with pytest.raises(MeasureError):
        read_measure(tmp_path / "missing.json")


def test_shipped_measures_are_valid():
    names = shipped_measures()
    assert {"deterministic", "isometric", "sl2_hyperbolic", "sl2_mixing", "sl3_hyperbolic"} <= set(names)
    for name in names:
        m = shipped_measure(name)
        assert np.allclose(np.linalg.det(m.matrices), 1, atol=1e-9)
    assert shipped_measure("deterministic").is_deterministic
    assert shipped_measure("isometric").is_isometric
    with pytest.raises(MeasureError):
        shipped_measure("nope")


def test_sample_word_examples():
    m = MatrixMeasure(np.array([1.0]), np.diag([2, 0.5])[None])
    assert len(sample_word(m, 0, 0)) == 0
    assert sample_word(m, 5, 0).indices.tolist() == [0] * 5
    with pytest.raises(ValidationError):
        sample_word(m, -1, 0)


def test_sample_word_frequencies():
    m = shipped_measure("sl2_hyperbolic")
    n = 100_000
    w = sample_word(m, n, 3)
    freq = np.mean(w.indices == 0)
    assert abs(freq - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_sample_word_deterministic():
    m = shipped_measure("sl2_mixing")
    a, b = sample_word(m, 50, rng_for(4, 1)), sample_word(m, 50, rng_for(4, 1))
    assert np.array_equal(a.indices, b.indices)
    assert not np.array_equal(a.indices, sample_word(m, 50, rng_for(4, 2)).indices)


def test_accumulate_examples():
    m = MatrixMeasure(np.array([1.0]), np.diag([2, 0.5])[None])
    f = accumulate(m, Word(np.zeros(0)))
    assert np.array_equal(f.q, np.eye(2)) and np.array_equal(f.log_diag, np.zeros(2))
    f = accumulate(m, Word([0, 0, 0]))
    assert np.allclose(f.log_diag, [3 * np.log(2), -3 * np.log(2)], atol=1e-14)
    with pytest.raises(ValidationError):
        accumulate(m, Word([1]))


def test_accumulate_matches_high_precision_singular_values():
    m = shipped_measure("sl2_mixing")
    w = sample_word(m, 50, 11)
    f = accumulate(m, w)
    oracle = mp_log_singular_values(m, w)
    assert np.allclose(np.exp(f.log_singular_values() - oracle), 1, rtol=1e-6, atol=0)
    assert np.allclose(f.q.T @ f.q, np.eye(2), atol=1e-9)


def test_long_product_singular_values_against_mpmath():
    # the smallest singular value is about exp(-300): far below float64 resolution of the product
    m = shipped_measure("sl3_hyperbolic")
    w = sample_word(m, 300, 5)
    oracle = mp_log_singular_values(m, w, dps=400)
    got = accumulate(m, w).log_singular_values()
    assert np.allclose(got, oracle, atol=1e-6)


def test_backward_word_order():
    m = shipped_measure("sl2_mixing")
    w = Word([0, 1, 1], "backward")
    assert np.allclose(w.product(m), m.matrices[0] @ m.matrices[1] @ m.matrices[1])
    with pytest.raises(ValidationError):
        Word([0], "sideways")


def test_first_moment_examples():
    assert first_moment(MatrixMeasure(np.array([1.0]), np.eye(3)[None])) == 0
    assert first_moment(MatrixMeasure(np.array([1.0]), np.diag([2, 0.5])[None])) == pytest.approx(np.log(2))
    m = shipped_measure("sl2_mixing")
    oracle = sum(p * np.log(np.linalg.svd(a, compute_uv=False)[0]) for p, a in m.atoms())
    assert first_moment(m) == pytest.approx(oracle, rel=1e-12)


def test_inverse_measure():
    m = shipped_measure("sl2_hyperbolic")
    mi = inverse_measure(m)
    assert np.allclose(mi.matrices @ m.matrices, np.eye(2))


def test_measure_validation():
    with pytest.raises(MeasureError):
        MatrixMeasure(np.array([0.5, 0.6]), np.stack([np.eye(2)] * 2))
    with pytest.raises(MeasureError):
        MatrixMeasure(np.array([]), np.zeros((0, 2, 2)))
    with pytest.raises(MeasureError):
        MatrixMeasure.from_atoms([])


def test_generic_frame_is_orthogonal_and_fixed():
    for d in (2, 3, 5):
        q = generic_frame(d)
        assert np.allclose(q.T @ q, np.eye(d))
        assert np.array_equal(q, generic_frame(d))
        # no zero entries: not aligned with coordinate subspaces
        assert np.abs(q).min() > 1e-3


def test_batch_matches_sequential():
    m = shipped_measure("sl3_hyperbolic")
    orders = np.stack([sample_word(m, 40, rng_for(1, r)).indices for r in range(5)])
    q, ell = batch_factorize(m.matrices, orders)
    for r in range(5):
        f = factorize_product(m.matrices[k] for k in orders[r])
        assert np.allclose(f.q, q[r]) and np.allclose(f.log_diag, ell[r])


def test_empty_product_needs_dimension():
    with pytest.raises(ValidationError):
        factorize_product([])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 60))
def test_prefix_flags_compose(seed, n1, n2):
    m = shipped_measure("sl3_hyperbolic")
    w = sample_word(m, n1 + n2, seed)
    full = factorize_product(m.matrices[k] for k in w.indices)
    head = factorize_product(m.matrices[k] for k in w.indices[:n1])
    tail = factorize_product((m.matrices[k] for k in w.indices[n1:]), q0=head.q)
    assert np.allclose(full.log_diag, head.log_diag + tail.log_diag, atol=1e-9)
    for k in (1, 2):
        a, b = full.q[:, :k], tail.q[:, :k]
        cos = np.linalg.svd(a.T @ b, compute_uv=False)
        assert np.arccos(min(cos.min(), 1.0)) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 40))
def test_factorization_invariants(seed, n):
    m = shipped_measure("sl2_mixing")
    f = accumulate(m, sample_word(m, n, seed))
    assert np.allclose(f.q.T @ f.q, np.eye(2), atol=1e-9)
    assert np.all(np.isfinite(f.log_diag))
    assert abs(f.log_diag.sum()) <= 1e-9 * max(n, 1)
    if n <= 30:
        assert np.allclose(f.matrix(), sample_word(m, n, seed).product(m), rtol=1e-8, atol=1e-8 * 3.0 ** n)


def test_rotation_helper():
    assert np.allclose(rotation(np.pi / 2), [[0, -1], [1, 0]])
