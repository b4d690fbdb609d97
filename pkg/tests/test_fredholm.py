import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afred.diagnostics import estimate_moduli
from afred.errors import AmbiguousRank, NotContractive, OutOfDomain, Singular, Truncation
from afred.fredholm import (Stabilization, assemble_stabilization, inverse_at, invert_direct, invert_neumann,
                            kernel_cokernel, stabilization_continuity_audit)
from afred.models import (make_classical_parabola, make_identity_family, make_linear_family, make_squared_map,
                          make_toy_shrink)
from afred.solver import select_radii


def test_kernel_cokernel_examples():
    kc = kernel_cokernel(make_identity_family(2))
    assert (kc.dim_K, kc.dim_C) == (0, 0)
    kc = kernel_cokernel(make_classical_parabola())
    assert (kc.dim_K, kc.dim_C) == (1, 0)
    np.testing.assert_allclose(np.abs(kc.K[:, 0]), [1, 0], atol=1e-15)
    kc = kernel_cokernel(make_toy_shrink())
    assert (kc.dim_K, kc.dim_C, kc.index) == (1, 1, 0)
    np.testing.assert_allclose(np.abs(kc.K[:, 0]), [1, 0], atol=1e-15)
    np.testing.assert_allclose(np.abs(kc.C[:, 0]), [1, 0], atol=1e-15)
    kc = kernel_cokernel(make_squared_map())
    assert (kc.dim_K, kc.dim_C) == (2, 2)


def test_kernel_cokernel_rank_tolerance():
    fam = make_linear_family(np.diag([1.0, 1e-8]))
    with pytest.raises(AmbiguousRank):
        kernel_cokernel(fam)
    assert kernel_cokernel(fam, rank_tol=1e-12).dim_K == 0
    assert kernel_cokernel(fam, rank_tol=1e-4).dim_K == 1
    with pytest.raises(ValueError):
        kernel_cokernel(fam, rank_tol=0.0)


def test_broken_variant_declares_fast_cokernel():
    kc = kernel_cokernel(make_toy_shrink(broken=True))
    assert (kc.dim_K, kc.dim_C, kc.index) == (1, 2, 1)


def test_invert_direct_examples():
    inv = invert_direct(Stabilization.from_matrix(np.eye(3)))
    np.testing.assert_array_equal(inv.Q, np.eye(3))
    assert inv.residual == 0.0 and inv.method == "direct" and inv.neumann_terms == 0
    with pytest.raises(Singular):
        invert_direct(Stabilization.from_matrix([[1.0, 1.0], [1.0, 1.0]]))


def test_toy_inverse_at_zero_is_hand_inverse():
    fam = make_toy_shrink()
    kc = kernel_cokernel(fam)
    st0 = assemble_stabilization(fam, fam.zero, np.zeros(2), kc)
    # P(c, (x, y)) = (x, (-c, y)) up to the sign of the bases
    sK, sC = np.sign(kc.K[0, 0]), np.sign(kc.C[0, 0])
    expected_P = np.array([[0, sK, 0], [-sC, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(st0.P, expected_P, atol=1e-15)
    Q = invert_direct(st0).Q
    k, u, v = 0.3, -0.2, 0.7
    np.testing.assert_allclose(Q @ [k, u, v], [-sC * u, sK * k, v], atol=1e-15)


def test_neumann_examples():
    Q0 = invert_direct(np.eye(2))
    q = invert_neumann(Q0, np.eye(2), np.array([[1.0, 0.1], [0.0, 1.0]]))
    np.testing.assert_allclose(q.Q, [[1.0, -0.1], [0.0, 1.0]], atol=1e-15)
    assert q.neumann_terms == 2 and q.method == "neumann"
    q = invert_neumann(Q0, np.eye(2), 0.9 * np.eye(2))
    np.testing.assert_allclose(q.Q, np.eye(2) / 0.9, rtol=1e-12)
    assert q.T_norm == pytest.approx(0.1)
    with pytest.raises(NotContractive):
        invert_neumann(Q0, np.eye(2), np.zeros((2, 2)))
    with pytest.raises(Truncation):
        invert_neumann(Q0, np.eye(2), 0.1 * np.eye(2), max_terms=5)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.just(0.0) | st.floats(1e-12, 1), st.floats(0, 0.01))
def test_inverse_identities_toy(x, y, e, tau):
    fam = make_toy_shrink()
    kc = kernel_cokernel(fam)
    inv = inverse_at(fam, [e, tau], [x, y], kc)
    assert inv.residual <= 1e-10 and inv.residual_PQ <= 1e-10
    assert inv.CQ_observed >= 1.0 - 1e-12


def test_assemble_respects_plan_radius():
    fam = make_toy_shrink()
    kc = kernel_cokernel(fam)
    plan = select_radii(fam)
    with pytest.raises(OutOfDomain):
        assemble_stabilization(fam, [0.5, 0.005], [0.2, 0.0], kc, plan=plan)
    assemble_stabilization(fam, [0.5, 0.005], [0.2, 0.0], kc, plan=plan, override=True)


def test_stabilization_continuity_audit():
    lin = make_linear_family(np.array([[1.0, 0.0], [0.0, 2.0]]))
    consts = estimate_moduli(lin)
    pairs = [(np.zeros(2), np.array([0.1, 0.0])), (np.ones(2) * 0.1, np.ones(2) * 0.1)]
    rep = stabilization_continuity_audit(lin, lin.zero, pairs, constants=consts)
    assert rep.passed and rep.value == 0.0
    toy = make_toy_shrink()
    rng = np.random.default_rng(0)
    pairs = [tuple(rng.uniform(-0.05, 0.05, (2, 2))) for _ in range(50)]
    rep = stabilization_continuity_audit(toy, np.array([0.25, 0.005]), pairs)
    assert rep.passed
