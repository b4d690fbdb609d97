import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afred.errors import DimensionError
from afred.sampling import ball_points, box_points, halton, unit_directions
from afred.spaces import (NormFamily, ParameterBox, ProductNorm, TangentVector, WeightMatrix, block_norm,
                          exact_lower_bound_ratio, norm_lower_bound_audit, operator_norm, tangent_norms,
                          weighted_norm)

finite = st.floats(-10, 10, allow_nan=False)


def test_weighted_norm_examples():
    assert weighted_norm(WeightMatrix.identity(2), [3, 4]) == pytest.approx(5.0)
    assert weighted_norm(WeightMatrix.diagonal([1, 4]), [0, 1]) == pytest.approx(2.0)
    assert weighted_norm(WeightMatrix.identity(3), np.zeros(3)) == 0.0


def test_weighted_norm_rejects_bad_shape():
    with pytest.raises(DimensionError):
        weighted_norm(WeightMatrix.identity(2), [1.0, 2.0, 3.0])


def test_weight_matrix_validation():
    with pytest.raises(ValueError):
        WeightMatrix([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        WeightMatrix([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(ValueError):
        WeightMatrix.diagonal([1.0, 0.0])
    with pytest.raises(ValueError):
        WeightMatrix.diagonal([1.0, np.inf])


def test_from_factor_matches_gram():
    r = np.array([[1.0, 2.0], [0.0, 3.0], [4.0, 1.0]])
    W = WeightMatrix.from_factor(r)
    np.testing.assert_allclose(W.entries, r.T @ r, rtol=1e-14)
    v = np.array([0.3, -1.2])
    assert W.norm(v) == pytest.approx(np.linalg.norm(r @ v), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), st.floats(-5, 5))
def test_weighted_norm_is_a_norm(u, v, a):
    W = WeightMatrix([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]])
    assert W.norm(u + v) <= W.norm(u) + W.norm(v) + 1e-12
    assert W.norm(a * u) == pytest.approx(abs(a) * W.norm(u), abs=1e-12)
    assert W.norm(u) == pytest.approx(np.sqrt(u @ W.entries @ u), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=finite))
def test_scale_unscale_round_trip(y):
    W = WeightMatrix([[4.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(W.scale(W.unscale(y)), y, atol=1e-12)
    assert W.norm(W.unscale(y)) == pytest.approx(np.linalg.norm(y), abs=1e-12)


def test_tangent_norms_examples():
    I2 = WeightMatrix.identity(2)
    assert tangent_norms(TangentVector(1, [1, 0], [[0, 2]]), I2) == pytest.approx((3, 2))
    assert tangent_norms(TangentVector(0, [1, 0], []), I2) == pytest.approx((1, 0))
    tv = TangentVector(2, [0, 0], [[1, 0], [0, 1], [0, 0]])
    assert tangent_norms(tv, I2) == pytest.approx((2, 1))


def test_tangent_vector_validation_and_pairing():
    with pytest.raises(ValueError):
        TangentVector(1, [0, 0], [])
    with pytest.raises(DimensionError):
        TangentVector(1, [0, 0], [[1, 2, 3]])
    a = TangentVector(1, [1, 0], [[0, 1]])
    b = TangentVector(1, [2, 0], [[0, 2]])
    p = TangentVector.pair(a, b)
    assert p.level == 2
    np.testing.assert_array_equal(p.as_array(), [1, 0, 0, 1, 2, 0, 0, 2])
    with pytest.raises(ValueError):
        TangentVector.from_flat([[0.0], [1.0], [2.0]])


def test_parameter_box():
    box = ParameterBox((0.0, 0.0), (1.0, 0.01))
    assert box.m == 2 and not box.is_trivial
    np.testing.assert_array_equal(box.distinguished_zero, [0, 0])
    assert box.contains([0.5, 0.005]) and not box.contains([0.5, 0.02]) and not box.contains([0.5])
    assert box.scaled(0.5).highs == (0.5, 0.005)
    assert box.scale_of([0.25, 0.0075]) == pytest.approx(0.75)
    path = box.dyadic_path(3)
    np.testing.assert_allclose(path[-1], [0.125, 0.00125])
    with pytest.raises(ValueError):
        ParameterBox((1.0,), (0.0,))


def _shrink_norms(C=1.0, inverted=False):
    def fn(eps):
        e = float(eps[0])
        return WeightMatrix.diagonal([1.0, e if inverted else 1.0 / e]) if e > 0 else WeightMatrix.identity(2)

    return NormFamily(2, fn, WeightMatrix.identity(2), (0.0,), lower_bound_constant=C)


def test_norm_lower_bound_audit_examples():
    ident = NormFamily.constant(WeightMatrix.identity(2), (0.0,))
    rep = norm_lower_bound_audit(ident, [np.array([0.5])], 64)
    assert rep.passed and rep.value == pytest.approx(1.0)
    rep = norm_lower_bound_audit(_shrink_norms(), [np.array([0.25])], 256, seed=1)
    assert rep.passed and rep.value <= 1.0
    rep = norm_lower_bound_audit(_shrink_norms(inverted=True), [np.array([0.25])], 256, seed=1)
    assert not rep.passed and 1.5 < rep.value <= 2.0
    assert exact_lower_bound_ratio(_shrink_norms(inverted=True), np.array([0.25])) == pytest.approx(2.0)


def test_product_norm_and_conjugate():
    W = WeightMatrix.diagonal([1.0, 4.0])
    P = ProductNorm.of(1, W)
    assert P.sizes == [1, 2] and P.dim == 3
    assert P.norm([3.0, 0.0, 1.0]) == pytest.approx(5.0)
    M = np.arange(9.0).reshape(3, 3)
    Mt = P.conjugate(M, P)
    np.testing.assert_allclose(Mt, P.scale_matrix @ M @ np.linalg.inv(P.scale_matrix))


def test_block_norm_single_block_is_spectral():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert block_norm(M, [2], [2]) == pytest.approx(np.linalg.norm(M, 2))


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-3, 3, allow_nan=False)))
def test_block_norm_between_sampled_and_upper(M):
    rows, cols = [1, 2], [3]
    ascent = block_norm(M, rows, cols)
    upper = block_norm(M, rows, cols, bound="upper")
    assert ascent <= upper * (1 + 1e-12) + 1e-15
    X = unit_directions(200, 3, seed=4)
    sampled = max(abs(x @ M[0]) + np.linalg.norm(M[1:] @ x) for x in X)
    assert sampled <= ascent * (1 + 1e-9) + 1e-12


def test_operator_norm_weighted():
    W = WeightMatrix.diagonal([1.0, 100.0])
    # |(0, x)|_W = 10 |x|, so the identity from I to W has norm 10
    assert operator_norm(np.eye(2), WeightMatrix.identity(2), W) == pytest.approx(10.0)
    assert operator_norm(np.eye(2), W, WeightMatrix.identity(2)) == pytest.approx(1.0)


def test_sampling_shapes_and_determinism():
    np.testing.assert_array_equal(halton(5, 2, 3), halton(5, 2, 3))
    d = unit_directions(20, 3, 1)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    b = ball_points(50, 2, 0.3, 2)
    assert np.all(np.linalg.norm(b, axis=1) <= 0.3)
    p = box_points(30, [0, 0], [1, 0.01], 0)
    assert np.all((p >= 0) & (p <= [1, 0.01]))
    assert halton(0, 2).shape == (0, 2)
