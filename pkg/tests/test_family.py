import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afred.errors import DimensionError, OutOfDelta, OutOfDomain, UnsupportedLevel
from afred.family import (FamilyConstants, ModulusTable, compose, differential, evaluate, fd_differential,
                          jacobian, q_constants, tangent_derivative_blocks, tangent_map)
from afred.models import (make_classical_parabola, make_cubic, make_linear_family, make_squared_map,
                          make_toy_shrink)
from afred.spaces import TangentVector

small = st.floats(-0.1, 0.1, allow_nan=False)


def test_evaluate_examples():
    assert evaluate(make_classical_parabola(), (), [0.1, 0.05])[0] == pytest.approx(0.04)
    np.testing.assert_allclose(evaluate(make_toy_shrink(), [0.25, 0.01], [0.1, 0.025]), [0.0025, 0.0], atol=1e-17)
    for fam in (make_classical_parabola(), make_squared_map(), make_toy_shrink(), make_cubic()):
        np.testing.assert_array_equal(evaluate(fam, fam.zero, np.zeros(fam.n_domain)), 0.0)


def test_evaluate_domain_checks():
    toy = make_toy_shrink()
    with pytest.raises(OutOfDelta):
        evaluate(toy, [0.5, 0.02], [0.0, 0.0])
    with pytest.raises(OutOfDomain):
        evaluate(toy, [0.5, 0.0], [0.3, 0.0])
    with pytest.raises(DimensionError):
        evaluate(toy, [0.5, 0.0], [0.0, 0.0, 0.0])


def test_differential_examples():
    A = np.array([[1.0, 2.0], [0.0, 3.0]])
    lin = make_linear_family(A)
    v = np.array([0.2, -0.1])
    np.testing.assert_allclose(differential(lin, (), np.zeros(2), 1, [v]), A @ v)
    np.testing.assert_array_equal(differential(lin, (), np.zeros(2), 2, [v, v]), 0.0)
    par = make_classical_parabola()
    assert differential(par, (), [0.3, 0.1], 2, [[1, 0], [1, 0]])[0] == pytest.approx(-2.0)
    toy = make_toy_shrink()
    np.testing.assert_allclose(differential(toy, [0.25, 0.01], [0.1, 0.025], 1, [[1, 0.25]]), [0.25, 0.0],
                               atol=1e-16)


@settings(max_examples=30, deadline=None)
@given(small, small, small, small)
def test_analytic_differentials_match_finite_differences(x, y, a, b):
    toy = make_toy_shrink()
    eps = np.array([0.4, 0.005])
    g = np.array([x, y])
    v, w = np.array([1.0, a]), np.array([b, 1.0])
    np.testing.assert_allclose(differential(toy, eps, g, 1, [v]), fd_differential(toy, eps, g, 1, [v]), atol=1e-8)
    np.testing.assert_allclose(differential(toy, eps, g, 2, [v, w]), fd_differential(toy, eps, g, 2, [v, w]),
                               atol=1e-6)
    np.testing.assert_allclose(jacobian(toy, eps, g) @ v, differential(toy, eps, g, 1, [v]), atol=1e-15)


def test_tangent_map_examples():
    A = np.array([[1.0, 2.0], [0.0, 3.0]])
    lin = make_linear_family(A)
    vs = [np.array([0.1, 0.2]), np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    out = tangent_map(lin, (), 2, TangentVector.from_flat(vs)).flat()
    for o, v in zip(out, vs):
        np.testing.assert_allclose(o, A @ v)
    cubic = make_cubic()
    out = tangent_map(cubic, (), 2, TangentVector.from_flat([[1.0], [1.0], [1.0], [0.0]])).as_array()
    np.testing.assert_allclose(out, [1, 3, 3, 6])
    toy = make_toy_shrink()
    g = np.array([0.05, 0.01])
    out = tangent_map(toy, [0.2, 0.01], 1, TangentVector(1, g, [np.zeros(2)])).flat()
    np.testing.assert_allclose(out[0], evaluate(toy, [0.2, 0.01], g))
    np.testing.assert_array_equal(out[1], 0.0)
    with pytest.raises(UnsupportedLevel):
        tangent_map(toy, [0.2, 0.01], 3, TangentVector.from_flat([g] * 8))


def test_tangent_derivative_blocks_match_fd():
    toy = make_toy_shrink()
    eps = np.array([0.3, 0.004])
    base = [np.array([0.05, 0.02]), np.array([0.3, -0.2]), np.array([0.1, 0.4]), np.array([-0.2, 0.1])]
    tv = TangentVector.from_flat(base)
    M = tangent_derivative_blocks(toy, eps, 2, tv)
    d = np.array([0.2, -0.1, 0.05, 0.3, -0.4, 0.1, 0.2, 0.0])
    h = 1e-6
    plus = tangent_map(toy, eps, 2, TangentVector.from_flat(np.split(tv.as_array() + h * d, 4))).as_array()
    minus = tangent_map(toy, eps, 2, TangentVector.from_flat(np.split(tv.as_array() - h * d, 4))).as_array()
    np.testing.assert_allclose(M @ d, (plus - minus) / (2 * h), atol=1e-8)


def test_compose_chain_rule():
    sq = make_squared_map()
    fg = compose(sq, sq)
    x = np.array([0.2, 0.1])
    np.testing.assert_allclose(evaluate(fg, fg.zero, x), evaluate(sq, (), evaluate(sq, (), x)))
    tv = TangentVector(1, x, [np.array([1.0, -1.0])])
    lhs = tangent_map(fg, fg.zero, 1, tv).as_array()
    rhs = tangent_map(sq, (), 1, tangent_map(sq, (), 1, tv)).as_array()
    np.testing.assert_allclose(lhs, rhs, atol=1e-15)
    with pytest.raises(DimensionError):
        compose(make_classical_parabola(), make_cubic())


def test_modulus_table_lookup():
    t = ModulusTable(np.array([0.1, 0.2, 0.4]), np.array([1.0, 0.5, 3.0]))
    assert t(0.0) == 0.0
    assert t(0.05) == 1.0
    assert t(0.15) == 1.0  # envelope is monotone
    assert t(0.4) == 3.0
    assert t(0.5) == float("inf")
    assert t.largest_arg_below(1.0) == pytest.approx(0.2)
    s = ModulusTable.from_samples([0.05, 0.15, 0.3], [1.0, 2.0, 0.5], [0.1, 0.2, 0.4])
    np.testing.assert_allclose(s.values, [0, 1, 2, 2])


def test_q_constants_formula():
    prelim, cq = q_constants(1.0, 2.0, 3.0)
    assert prelim == pytest.approx(2 * (2 + 1 + 2 + 3))
    assert cq == pytest.approx(4 * 8)
    assert q_constants(0.0, 0.0, 0.0) == (0.0, 1.0)
    zero = ModulusTable.zero(1.0)
    with pytest.raises(ValueError):
        FamilyConstants(-1.0, 0.0, 0.0, zero, zero, zero, 0.0)
